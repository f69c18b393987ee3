#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "binary_io.hpp"
#include "corpus_store.hpp"
#include "error.hpp"
#include "keyword_extract.hpp"
#include "tokenizer.hpp"

namespace domada {

struct Posting {
    std::uint64_t doc_id = 0;
    std::uint32_t tf = 0;
    bool operator==(const Posting&) const = default;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
    bool operator==(const Bm25Params&) const = default;
};

/// Everything BM25 needs. Terms are kept in a sorted map so the on-disk
/// dictionary order is canonical.
struct InvertedIndex {
    std::map<std::string, std::vector<Posting>, std::less<>> postings;
    std::vector<std::uint64_t> doc_lengths;
    std::uint64_t total_tokens = 0;
    double avgdl = 0.0;
    Bm25Params params;
    std::string tokenizer_id = CjkCharTokenizer::kId;

    std::uint64_t num_docs() const noexcept { return doc_lengths.size(); }

    const std::vector<Posting>* find(std::string_view term) const {
        auto it = postings.find(term);
        return it == postings.end() ? nullptr : &it->second;
    }

    /// ln(1 + (N - n + 0.5) / (n + 0.5)); strictly positive for n >= 1.
    double idf(std::uint64_t df) const {
        const double n = static_cast<double>(df);
        const double N = static_cast<double>(num_docs());
        return std::log(1.0 + (N - n + 0.5) / (n + 0.5));
    }

    /// Saturated term-frequency factor f(k1+1) / (f + k1 (1 - b + b |D|/avgdl)).
    double tf_factor(std::uint32_t tf, std::uint64_t doc_len) const {
        const double f = tf;
        const double norm = 1.0 - params.b + params.b * static_cast<double>(doc_len) / avgdl;
        return f * (params.k1 + 1.0) / (f + params.k1 * norm);
    }

    bool operator==(const InvertedIndex&) const = default;
};

inline InvertedIndex build_index(const CorpusStore& store, const Tokenizer& tokenizer, Bm25Params params = {}) {
    if (store.empty()) throw InvalidArgument("build_index: empty store, avgdl undefined");
    if (!(params.k1 > 0.0)) throw InvalidArgument("build_index: k1 must be positive");
    if (!(params.b >= 0.0 && params.b <= 1.0)) throw InvalidArgument("build_index: b must be in [0, 1]");

    InvertedIndex index;
    index.params = params;
    index.tokenizer_id = tokenizer.id();
    index.doc_lengths.reserve(store.size());
    for (const auto& doc : store) {
        auto tokens = tokenizer.tokenize(doc.text);
        std::map<std::string_view, std::uint32_t> tf;
        for (const auto& t : tokens) ++tf[t];
        // Documents arrive in doc_id order, so each postings list stays sorted.
        for (auto [term, f] : tf) {
            auto it = index.postings.find(term);
            if (it == index.postings.end()) it = index.postings.emplace(std::string(term), std::vector<Posting>{}).first;
            it->second.push_back({doc.doc_id, f});
        }
        index.doc_lengths.push_back(tokens.size());
        index.total_tokens += tokens.size();
    }
    index.avgdl = static_cast<double>(index.total_tokens) / static_cast<double>(index.num_docs());
    if (!(index.avgdl > 0.0)) throw InvalidArgument("build_index: corpus has no tokens");
    return index;
}

/// Bag of query tokens with repetition counts, sorted by token.
struct ExpandedQuery {
    std::vector<std::pair<std::string, std::uint32_t>> terms;

    std::uint32_t multiplicity(std::string_view term) const {
        for (const auto& [t, m] : terms)
            if (t == term) return m;
        return 0;
    }
    std::size_t total_terms() const {
        std::size_t n = 0;
        for (const auto& [_, m] : terms) n += m;
        return n;
    }
    bool empty() const noexcept { return terms.empty(); }

    static ExpandedQuery from_tokens(const std::vector<std::string>& tokens) {
        std::map<std::string, std::uint32_t> m;
        for (const auto& t : tokens) ++m[t];
        ExpandedQuery q;
        q.terms.assign(m.begin(), m.end());
        return q;
    }
};

/// max(1, min(floor(w), 3)).
inline std::uint32_t repetitions(double weight) {
    const double f = std::floor(weight);
    if (!(f >= 1.0)) return 1;
    return f >= 3.0 ? 3u : static_cast<std::uint32_t>(f);
}

/// Each keyword contributes each of its tokens `repetitions(w)` times.
inline ExpandedQuery expand_query(const DomainKeywordSet& keywords, const Tokenizer& tokenizer) {
    std::map<std::string, std::uint32_t> m;
    for (const auto& k : keywords.entries) {
        const auto reps = repetitions(k.weight);
        for (auto& tok : tokenizer.tokenize(k.keyword)) m[tok] += reps;
    }
    ExpandedQuery q;
    q.terms.assign(m.begin(), m.end());
    return q;
}

/// Query from a single sample's own top-k keywords (each at count 1, so one
/// repetition). The pipeline uses the fused set instead.
inline ExpandedQuery sample_query(std::string_view sample, const Tokenizer& tokenizer, const KeywordOptions& opt = {}) {
    DomainKeywordSet set;
    for (auto& kw : sample_keywords(sample, tokenizer, opt)) set.entries.push_back({kw, 1, keyword_weight(1), Provenance::task});
    return expand_query(set, tokenizer);
}

/// Contribution of one occurrence of `term` to the score of `doc_id`.
inline double term_contribution(const InvertedIndex& index, std::uint64_t doc_id, std::string_view term) {
    const auto* list = index.find(term);
    if (list == nullptr) return 0.0;
    auto it = std::lower_bound(list->begin(), list->end(), doc_id,
                               [](const Posting& p, std::uint64_t id) { return p.doc_id < id; });
    if (it == list->end() || it->doc_id != doc_id) return 0.0;
    return index.idf(list->size()) * index.tf_factor(it->tf, index.doc_lengths[doc_id]);
}

inline double bm25_score(const InvertedIndex& index, std::uint64_t doc_id, const ExpandedQuery& query) {
    if (doc_id >= index.num_docs()) throw InvalidArgument("bm25_score: doc_id out of range");
    double score = 0.0;
    for (const auto& [term, mult] : query.terms) score += static_cast<double>(mult) * term_contribution(index, doc_id, term);
    return score;
}

struct ScoredDoc {
    std::uint64_t doc_id = 0;
    double score = 0.0;
    bool operator==(const ScoredDoc&) const = default;
};

/// Score-descending, doc_id-ascending on ties.
inline bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.doc_id < b.doc_id;
}

/// Term-at-a-time accumulation over the postings of each query term.
inline std::vector<double> score_all(const InvertedIndex& index, const ExpandedQuery& query) {
    std::vector<double> acc(index.num_docs(), 0.0);
    for (const auto& [term, mult] : query.terms) {
        const auto* list = index.find(term);
        if (list == nullptr) continue;
        const double idf = index.idf(list->size());
        for (const auto& p : *list)
            acc[p.doc_id] += static_cast<double>(mult) * (idf * index.tf_factor(p.tf, index.doc_lengths[p.doc_id]));
    }
    return acc;
}

/// The n best documents with positive score.
inline std::vector<ScoredDoc> retrieve_top_n(const InvertedIndex& index, const ExpandedQuery& query, std::size_t n) {
    if (n == 0) throw InvalidArgument("retrieve_top_n: n must be >= 1");
    auto acc = score_all(index, query);
    std::vector<ScoredDoc> hits;
    for (std::uint64_t d = 0; d < acc.size(); ++d)
        if (acc[d] > 0.0) hits.push_back({d, acc[d]});
    const auto keep = std::min(n, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(), ranks_before);
    hits.resize(keep);
    return hits;
}

struct Selection {
    CorpusStore store;
    /// sources[i] is the original document behind store.documents[i].
    std::vector<ScoredDoc> sources;
};

/// Takes documents in rank order until the next one would exceed the budget.
inline Selection select_corpus(const InvertedIndex& index, const CorpusStore& store, const ExpandedQuery& query,
                               std::uint64_t token_budget) {
    if (token_budget == 0) throw InvalidArgument("select_corpus: token_budget must be >= 1");
    if (index.num_docs() != store.size()) throw InvalidArgument("select_corpus: index and store disagree on size");
    auto ranked = retrieve_top_n(index, query, std::max<std::size_t>(1, store.size()));
    if (ranked.empty()) throw RetrievalError("no positive-score documents for the query");

    Selection sel;
    sel.store.tokenizer_id = store.tokenizer_id;
    for (const auto& hit : ranked) {
        const auto& src = store[hit.doc_id];
        if (sel.store.total_tokens + src.token_count > token_budget) break;
        Document d = src;
        d.doc_id = sel.store.documents.size();
        sel.store.total_tokens += d.token_count;
        sel.store.documents.push_back(std::move(d));
        sel.sources.push_back(hit);
    }
    if (sel.store.empty()) {
        throw RetrievalError("token budget " + std::to_string(token_budget) +
                             " is smaller than the top-ranked document (doc " + std::to_string(ranked.front().doc_id) +
                             ", " + std::to_string(store[ranked.front().doc_id].token_count) + " tokens, " +
                             std::to_string(ranked.size()) + " positive-score documents)");
    }
    return sel;
}

// ---------------------------------------------------------------------------
// Index file, little-endian:
//   "DFIDX1"
//   u32 len + tokenizer id
//   u64 N, u64 total_tokens, f64 avgdl, f64 k1, f64 b
//   N x u64 document length
//   u64 term count, then per term (sorted): u32 len + UTF-8 bytes, u64 df,
//     df x (u64 doc_id delta, u32 tf)
//   u64 FNV-1a checksum of all preceding bytes

inline constexpr std::string_view kIndexMagic = "DFIDX1";

inline std::string serialize_index(const InvertedIndex& index) {
    BinaryWriter w;
    w.raw(kIndexMagic);
    w.str32(index.tokenizer_id);
    w.u64(index.num_docs());
    w.u64(index.total_tokens);
    w.f64(index.avgdl);
    w.f64(index.params.k1);
    w.f64(index.params.b);
    for (auto len : index.doc_lengths) w.u64(len);
    w.u64(index.postings.size());
    for (const auto& [term, list] : index.postings) {
        w.str32(term);
        w.u64(list.size());
        std::uint64_t prev = 0;
        for (const auto& p : list) {
            w.u64(p.doc_id - prev);
            w.u32(p.tf);
            prev = p.doc_id;
        }
    }
    w.seal();
    return w.bytes();
}

inline InvertedIndex deserialize_index(std::string_view bytes) {
    if (bytes.size() < kIndexMagic.size() || !bytes.starts_with("DFIDX")) throw FormatError("index: bad magic header");
    if (!bytes.starts_with(kIndexMagic)) throw VersionError("index: unsupported version");
    if (bytes.size() < kIndexMagic.size() + 8) throw TruncatedError("index: file too short");
    // Validate the checksum up front so corruption is reported as such rather
    // than as whatever structural error it happens to cause.
    const auto body = bytes.substr(0, bytes.size() - 8);
    BinaryReader tail(bytes.substr(bytes.size() - 8), "index");
    const bool checksum_ok = tail.u64() == fnv1a64(body);

    BinaryReader r(bytes, "index");
    InvertedIndex index;
    try {
        r.raw(kIndexMagic.size());
        index.tokenizer_id = r.str32();
        const auto n = r.u64();
        index.total_tokens = r.u64();
        index.avgdl = r.f64();
        index.params.k1 = r.f64();
        index.params.b = r.f64();
        if (n > r.remaining() / 8) throw TruncatedError("index: document table exceeds file");
        index.doc_lengths.resize(n);
        for (auto& len : index.doc_lengths) len = r.u64();
        const auto terms = r.u64();
        for (std::uint64_t t = 0; t < terms; ++t) {
            auto term = r.str32();
            const auto df = r.u64();
            if (df > r.remaining() / 12) throw TruncatedError("index: postings exceed file");
            std::vector<Posting> list(df);
            std::uint64_t prev = 0;
            for (auto& p : list) {
                p.doc_id = prev + r.u64();
                p.tf = r.u32();
                prev = p.doc_id;
                if (p.doc_id >= n) throw FormatError("index: posting doc_id out of range");
            }
            index.postings.emplace(std::move(term), std::move(list));
        }
        r.verify_seal();
    } catch (const FormatError&) {
        // Running out of bytes is reported as truncation; any other
        // structural failure under a bad checksum is corruption.
        if (!checksum_ok) throw ChecksumError("index: checksum mismatch");
        throw;
    }
    return index;
}

inline void save_index(const InvertedIndex& index, const std::string& path) { write_file(path, serialize_index(index)); }
inline InvertedIndex load_index(const std::string& path) { return deserialize_index(read_file(path)); }

}  // namespace domada
