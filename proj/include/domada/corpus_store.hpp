#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "binary_io.hpp"
#include "checksum.hpp"
#include "error.hpp"
#include "tokenizer.hpp"
#include "utf8.hpp"

namespace domada {

struct RawRecord {
    std::string source_id;
    std::string title;
    std::string body;
};

struct Document {
    std::uint64_t doc_id = 0;
    std::string title;
    std::string text;
    std::uint64_t token_count = 0;

    bool operator==(const Document&) const = default;
};

/// Immutable once built; iteration order is doc_id order.
struct CorpusStore {
    std::vector<Document> documents;
    std::uint64_t total_tokens = 0;
    std::string tokenizer_id = CjkCharTokenizer::kId;

    std::size_t size() const noexcept { return documents.size(); }
    bool empty() const noexcept { return documents.empty(); }
    const Document& operator[](std::size_t i) const { return documents[i]; }
    auto begin() const noexcept { return documents.begin(); }
    auto end() const noexcept { return documents.end(); }

    bool operator==(const CorpusStore&) const = default;
};

namespace detail {

// Full-width ASCII variants and common CJK punctuation map to half-width.
constexpr char32_t to_half_width(char32_t c) noexcept {
    if (c >= 0xff01 && c <= 0xff5e) return c - 0xfee0;
    switch (c) {
        case 0x3000: return ' ';
        case 0x3001: return ',';
        case 0x3002: return '.';
        case 0x300c: case 0x300d: case 0x300e: case 0x300f:
        case 0x201c: case 0x201d: return '"';
        case 0x2018: case 0x2019: return '\'';
        case 0x3010: return '[';
        case 0x3011: return ']';
        case 0x3014: return '(';
        case 0x3015: return ')';
        case 0xff61: return '.';
        case 0xff64: return ',';
        default: return c;
    }
}

constexpr bool is_url_char(char32_t c) noexcept {
    if (c >= 0x80) return false;
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9')) return true;
    constexpr std::string_view extra = "-._~:/?#[]@!$&'()*+,;=%";
    return extra.find(static_cast<char>(c)) != std::string_view::npos;
}

inline bool starts_with_ci(const std::u32string& s, std::size_t at, std::string_view prefix) {
    if (at + prefix.size() > s.size()) return false;
    for (std::size_t k = 0; k < prefix.size(); ++k) {
        if (utf8::to_lower(s[at + k]) != static_cast<char32_t>(prefix[k])) return false;
    }
    return true;
}

inline bool strip_controls(std::u32string& s) {
    auto n = s.size();
    std::erase_if(s, [](char32_t c) { return utf8::is_control(c); });
    return s.size() != n;
}

// Removes <...> spans that contain no further angle brackets.
inline bool strip_tags(std::u32string& s) {
    std::u32string out;
    out.reserve(s.size());
    bool changed = false;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '<') {
            std::size_t j = i + 1;
            while (j < s.size() && s[j] != '<' && s[j] != '>') ++j;
            if (j < s.size() && s[j] == '>') {
                i = j + 1;
                changed = true;
                continue;
            }
        }
        out.push_back(s[i++]);
    }
    s.swap(out);
    return changed;
}

// Removes innermost {{...}} templates.
inline bool strip_templates(std::u32string& s) {
    std::u32string out;
    out.reserve(s.size());
    bool changed = false;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '{' && i + 1 < s.size() && s[i + 1] == '{') {
            std::size_t j = i + 2;
            while (j < s.size() && s[j] != '{' && s[j] != '}') ++j;
            if (j + 1 < s.size() && s[j] == '}' && s[j + 1] == '}') {
                i = j + 2;
                changed = true;
                continue;
            }
        }
        out.push_back(s[i++]);
    }
    s.swap(out);
    return changed;
}

// [[target|label]] -> label, [[target]] -> target.
inline bool unwrap_wiki_links(std::u32string& s) {
    std::u32string out;
    out.reserve(s.size());
    bool changed = false;
    std::size_t i = 0;
    while (i < s.size()) {
        if (s[i] == '[' && i + 1 < s.size() && s[i + 1] == '[') {
            std::size_t j = i + 2;
            while (j < s.size() && s[j] != '[' && s[j] != ']') ++j;
            if (j + 1 < s.size() && s[j] == ']' && s[j + 1] == ']') {
                std::u32string_view inner(s.data() + i + 2, j - i - 2);
                auto bar = inner.rfind(U'|');
                if (bar != std::u32string_view::npos) inner.remove_prefix(bar + 1);
                out.append(inner);
                i = j + 2;
                changed = true;
                continue;
            }
        }
        out.push_back(s[i++]);
    }
    s.swap(out);
    return changed;
}

inline bool strip_urls(std::u32string& s) {
    std::u32string out;
    out.reserve(s.size());
    bool changed = false;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t prefix = 0;
        for (std::string_view p : {"https://", "http://", "ftp://", "www."}) {
            if (starts_with_ci(s, i, p)) {
                prefix = p.size();
                break;
            }
        }
        if (prefix != 0 && i + prefix < s.size() && is_url_char(s[i + prefix])) {
            std::size_t j = i + prefix;
            while (j < s.size() && is_url_char(s[j])) ++j;
            i = j;
            changed = true;
            continue;
        }
        out.push_back(s[i++]);
    }
    s.swap(out);
    return changed;
}

}  // namespace detail

/// Normalizes punctuation to half-width, strips markup tags, wiki templates,
/// URLs and control characters, then collapses whitespace runs (newlines
/// included) to one space and trims. Idempotent.
inline std::string clean_text(std::string_view raw) {
    std::u32string s = utf8::decode(raw);
    for (auto& c : s) c = detail::to_half_width(c);

    // Each removal may expose a new match for another rule; iterate to a fixpoint.
    // Every pass that reports a change strictly shortens or rewrites the string.
    for (bool changed = true; changed;) {
        changed = false;
        changed |= detail::strip_controls(s);
        changed |= detail::strip_tags(s);
        changed |= detail::strip_templates(s);
        changed |= detail::unwrap_wiki_links(s);
        changed |= detail::strip_urls(s);
    }

    std::u32string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char32_t c : s) {
        if (utf8::is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return utf8::encode(out);
}

struct IngestOptions {
    std::size_t min_tokens = 10;
};

/// Cleans and tokenizes records; drops those shorter than `min_tokens`
/// after cleaning. doc_ids follow input order among survivors.
inline CorpusStore ingest(const std::vector<RawRecord>& records, const Tokenizer& tokenizer,
                          const IngestOptions& options = {}) {
    std::map<std::string, std::size_t> seen;
    std::vector<std::string> offenders;
    for (const auto& r : records) {
        if (++seen[r.source_id] == 2) offenders.push_back(r.source_id);
    }
    if (!offenders.empty()) {
        std::string msg = "duplicate source_id in ingest run:";
        for (const auto& id : offenders) msg += " '" + id + "'";
        throw DataError(msg);
    }

    CorpusStore store;
    store.tokenizer_id = tokenizer.id();
    for (const auto& r : records) {
        auto text = clean_text(r.body);
        if (text.empty()) continue;
        auto count = tokenizer.tokenize(text).size();
        if (count < options.min_tokens || count == 0) continue;
        Document doc;
        doc.doc_id = store.documents.size();
        doc.title = clean_text(r.title);
        doc.text = std::move(text);
        doc.token_count = count;
        store.total_tokens += count;
        store.documents.push_back(std::move(doc));
    }
    return store;
}

// ---------------------------------------------------------------------------
// Store file: UTF-8 lines
//   DFSTORE<TAB>1
//   doc_id<TAB>title<TAB>text<TAB>token_count        (one per document)
//   #end<TAB>count<TAB>total_tokens<TAB>tokenizer_id<TAB>checksum
// Fields escape backslash, tab, CR and LF. The checksum is FNV-1a 64 over all
// bytes preceding the footer line, written as 16 lowercase hex digits.

inline constexpr std::string_view kStoreMagic = "DFSTORE";
inline constexpr int kStoreVersion = 1;

namespace detail {

inline void escape_field(std::string& out, std::string_view field) {
    for (char c : field) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
}

inline std::string unescape_field(std::string_view field) {
    std::string out;
    out.reserve(field.size());
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (field[i] != '\\') {
            out.push_back(field[i]);
            continue;
        }
        if (++i == field.size()) throw FormatError("store: dangling escape");
        switch (field[i]) {
            case '\\': out.push_back('\\'); break;
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            default: throw FormatError("store: unknown escape sequence");
        }
    }
    return out;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
        auto tab = line.find('\t', start);
        parts.push_back(line.substr(start, tab - start));
        if (tab == std::string_view::npos) break;
        start = tab + 1;
    }
    return parts;
}

inline std::uint64_t parse_u64(std::string_view s, const char* what) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError(std::string("store: bad ") + what);
    return v;
}

}  // namespace detail

inline std::string serialize_store(const CorpusStore& store) {
    std::string out;
    out += kStoreMagic;
    out += '\t' + std::to_string(kStoreVersion) + '\n';
    for (const auto& d : store.documents) {
        out += std::to_string(d.doc_id);
        out += '\t';
        detail::escape_field(out, d.title);
        out += '\t';
        detail::escape_field(out, d.text);
        out += '\t';
        out += std::to_string(d.token_count);
        out += '\n';
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(out)));
    std::string footer = "#end\t" + std::to_string(store.documents.size()) + '\t' +
                         std::to_string(store.total_tokens) + '\t';
    detail::escape_field(footer, store.tokenizer_id);
    footer += '\t';
    footer += hex;
    footer += '\n';
    return out + footer;
}

inline CorpusStore deserialize_store(std::string_view bytes) {
    auto first_nl = bytes.find('\n');
    auto header = bytes.substr(0, first_nl);
    if (!header.starts_with(kStoreMagic) || header.size() < kStoreMagic.size() + 2 ||
        header[kStoreMagic.size()] != '\t')
        throw FormatError("store: bad magic header");
    if (header.substr(kStoreMagic.size() + 1) != std::to_string(kStoreVersion))
        throw VersionError("store: unsupported version '" + std::string(header.substr(kStoreMagic.size() + 1)) + "'");
    if (first_nl == std::string_view::npos) throw TruncatedError("store: missing footer");

    // Footer is the final line; anything else means the file was cut short.
    if (bytes.back() != '\n') throw TruncatedError("store: file does not end with a complete line");
    auto footer_start = bytes.rfind('\n', bytes.size() - 2);
    footer_start = footer_start == std::string_view::npos ? 0 : footer_start + 1;
    auto footer = bytes.substr(footer_start, bytes.size() - 1 - footer_start);
    if (!footer.starts_with("#end\t")) throw TruncatedError("store: missing footer");
    auto fparts = detail::split_tabs(footer);
    if (fparts.size() != 5 || fparts[4].size() != 16) throw FormatError("store: malformed footer");
    std::uint64_t stored = 0;
    auto [p, ec] = std::from_chars(fparts[4].data(), fparts[4].data() + 16, stored, 16);
    if (ec != std::errc{} || p != fparts[4].data() + 16) throw FormatError("store: malformed checksum");
    if (stored != fnv1a64(bytes.substr(0, footer_start))) throw ChecksumError("store: checksum mismatch");

    CorpusStore store;
    store.tokenizer_id = detail::unescape_field(fparts[3]);
    auto body = bytes.substr(first_nl + 1, footer_start - first_nl - 1);
    std::uint64_t sum = 0;
    while (!body.empty()) {
        auto nl = body.find('\n');
        auto line = body.substr(0, nl);
        body.remove_prefix(nl + 1);
        auto parts = detail::split_tabs(line);
        if (parts.size() != 4) throw FormatError("store: malformed document line");
        Document d;
        d.doc_id = detail::parse_u64(parts[0], "doc_id");
        if (d.doc_id != store.documents.size()) throw FormatError("store: non-contiguous doc_id");
        d.title = detail::unescape_field(parts[1]);
        d.text = detail::unescape_field(parts[2]);
        d.token_count = detail::parse_u64(parts[3], "token_count");
        sum += d.token_count;
        store.documents.push_back(std::move(d));
    }
    if (detail::parse_u64(fparts[1], "document count") != store.documents.size())
        throw FormatError("store: document count mismatch");
    store.total_tokens = detail::parse_u64(fparts[2], "total_tokens");
    if (store.total_tokens != sum) throw FormatError("store: total_tokens mismatch");
    return store;
}

inline void save_store(const CorpusStore& store, const std::string& path) {
    write_file(path, serialize_store(store));
}

inline CorpusStore load_store(const std::string& path) { return deserialize_store(read_file(path)); }

}  // namespace domada
