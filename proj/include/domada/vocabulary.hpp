#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "tokenizer.hpp"

namespace domada {

inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kBosId = 1;
inline constexpr std::uint32_t kEosId = 2;
inline constexpr std::uint32_t kUnkId = 3;
inline constexpr std::uint32_t kNumSpecial = 4;

/// Token <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK.
class Vocabulary {
public:
    Vocabulary() : tokens_{"<pad>", "<bos>", "<eos>", "<unk>"} { reindex(); }

    explicit Vocabulary(std::vector<std::string> regular) : Vocabulary() {
        for (auto& t : regular) tokens_.push_back(std::move(t));
        reindex();
    }

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(std::uint32_t id) const { return tokens_.at(id); }

    std::uint32_t id(std::string_view token) const {
        auto it = index_.find(std::string(token));
        return it == index_.end() ? kUnkId : it->second;
    }

    std::vector<std::uint32_t> encode(const std::vector<std::string>& tokens) const {
        std::vector<std::uint32_t> ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id(t));
        return ids;
    }

    /// Joins tokens, inserting a space only between two multi-character
    /// (non-CJK) tokens. Special tokens are skipped.
    std::string decode(const std::vector<std::uint32_t>& ids) const {
        std::string out;
        bool prev_word = false;
        for (auto i : ids) {
            if (i < kNumSpecial || i >= tokens_.size()) continue;
            const auto& t = tokens_[i];
            const auto cps = utf8::decode(t);
            const bool word = !cps.empty() && !utf8::is_cjk(cps.front());
            if (word && prev_word) out.push_back(' ');
            out += t;
            prev_word = word;
        }
        return out;
    }

    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

private:
    void reindex() {
        index_.clear();
        for (std::uint32_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

/// Most frequent `cap` tokens, ties broken by token order.
inline Vocabulary build_vocabulary(const std::vector<std::string>& texts, const Tokenizer& tokenizer, std::size_t cap) {
    std::map<std::string, std::uint64_t> freq;
    for (const auto& text : texts)
        for (auto& t : tokenizer.tokenize(text)) ++freq[t];
    std::vector<std::pair<std::string, std::uint64_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (items.size() > cap) items.resize(cap);
    std::vector<std::string> regular;
    regular.reserve(items.size());
    for (auto& [t, _] : items) regular.push_back(t);
    return Vocabulary(std::move(regular));
}

// Vocabulary file: "DFVOCAB1" on the first line, then one regular token per
// line in id order starting at id 4.

inline std::string serialize_vocabulary(const Vocabulary& v) {
    std::string out = "DFVOCAB1\n";
    for (std::size_t i = kNumSpecial; i < v.size(); ++i) out += v.tokens()[i] + '\n';
    return out;
}

inline Vocabulary parse_vocabulary(std::string_view text) {
    if (!text.starts_with("DFVOCAB1\n")) throw FormatError("vocabulary: bad magic header");
    text.remove_prefix(9);
    std::vector<std::string> tokens;
    while (!text.empty()) {
        auto nl = text.find('\n');
        if (nl == std::string_view::npos) throw TruncatedError("vocabulary: last line incomplete");
        tokens.emplace_back(text.substr(0, nl));
        text.remove_prefix(nl + 1);
    }
    return Vocabulary(std::move(tokens));
}

inline void save_vocabulary(const Vocabulary& v, const std::string& path) { write_file(path, serialize_vocabulary(v)); }
inline Vocabulary load_vocabulary(const std::string& path) { return parse_vocabulary(read_file(path)); }

}  // namespace domada
