#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "error.hpp"
#include "tokenizer.hpp"
#include "utf8.hpp"

namespace domada {

/// Undirected co-occurrence graph. Nodes are indexed in first-appearance
/// order; adjacency lists are sorted by neighbor index.
struct CooccurrenceGraph {
    std::vector<std::string> nodes;
    std::vector<std::vector<std::pair<std::size_t, double>>> adjacency;

    std::size_t size() const noexcept { return nodes.size(); }

    /// Weight of edge (u, v), 0 if absent.
    double weight(std::size_t u, std::size_t v) const {
        for (auto [n, w] : adjacency[u])
            if (n == v) return w;
        return 0.0;
    }

    std::size_t index_of(const std::string& token) const {
        auto it = std::find(nodes.begin(), nodes.end(), token);
        return it == nodes.end() ? nodes.size() : static_cast<std::size_t>(it - nodes.begin());
    }
};

/// Tokens that never become keyword candidates.
struct CandidateFilter {
    std::set<std::string> stopwords;
    bool drop_single_latin = true;

    bool accepts(const std::string& token) const {
        if (token.empty()) return false;
        if (drop_single_latin && token.size() == 1 && static_cast<unsigned char>(token[0]) < 0x80) return false;
        return !stopwords.contains(token);
    }
};

/// A small default stopword list of high-frequency function characters.
inline CandidateFilter default_candidate_filter() {
    CandidateFilter f;
    for (const char* w : {"的", "了", "是", "在", "和", "与", "及", "或", "也", "而", "之", "其", "为", "以", "于",
                          "等", "者", "有", "这", "那", "个", "中", "上", "下", "不", "就", "都", "the", "of",
                          "and", "to", "in", "is", "for", "on", "with", "as", "by", "an"})
        f.stopwords.insert(w);
    return f;
}

inline std::vector<std::string> filter_candidates(const std::vector<std::string>& tokens, const CandidateFilter& filter) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens)
        if (filter.accepts(t)) out.push_back(t);
    return out;
}

/// Joins tokens at positions i < j with j - i < window. Self pairs are skipped.
inline CooccurrenceGraph build_graph(const std::vector<std::string>& tokens, std::size_t window) {
    if (window < 2) throw InvalidArgument("build_graph: window must be >= 2");
    CooccurrenceGraph g;
    std::unordered_map<std::string, std::size_t> ids;
    std::vector<std::size_t> seq;
    seq.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto [it, inserted] = ids.try_emplace(t, g.nodes.size());
        if (inserted) g.nodes.push_back(t);
        seq.push_back(it->second);
    }
    std::vector<std::map<std::size_t, double>> adj(g.nodes.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        for (std::size_t j = i + 1; j < seq.size() && j - i < window; ++j) {
            if (seq[i] == seq[j]) continue;
            adj[seq[i]][seq[j]] += 1.0;
            adj[seq[j]][seq[i]] += 1.0;
        }
    }
    g.adjacency.resize(g.nodes.size());
    for (std::size_t u = 0; u < adj.size(); ++u) g.adjacency[u].assign(adj[u].begin(), adj[u].end());
    return g;
}

struct TextRankOptions {
    double damping = 0.85;
    double tol = 1e-6;
    std::size_t max_iter = 100;
};

struct TextRankResult {
    std::vector<double> scores;
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {
// Summing in sorted order makes results independent of node labelling, so
// relabelled graphs give bitwise-permuted scores.
inline double sorted_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}
}  // namespace detail

/// Weighted TextRank, synchronous (Jacobi) updates from all-ones:
///   WS(v) = (1-d) + d * sum_{u in adj(v)} w_uv / (sum_{x in adj(u)} w_ux) * WS(u)
/// Stops when the largest per-node change falls below `tol`.
inline TextRankResult textrank(const CooccurrenceGraph& graph, const TextRankOptions& opt = {}) {
    if (!(opt.damping > 0.0 && opt.damping < 1.0)) throw InvalidArgument("textrank: damping must be in (0, 1)");
    if (!(opt.tol > 0.0)) throw InvalidArgument("textrank: tol must be positive");

    const std::size_t n = graph.size();
    std::vector<double> out_weight(n, 0.0);
    std::vector<double> terms;
    for (std::size_t u = 0; u < n; ++u) {
        terms.clear();
        for (auto [v, w] : graph.adjacency[u]) terms.push_back(w);
        out_weight[u] = detail::sorted_sum(terms);
    }

    TextRankResult res;
    res.scores.assign(n, 1.0);
    std::vector<double> next(n);
    while (res.iterations < opt.max_iter) {
        double delta = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            terms.clear();
            for (auto [u, w] : graph.adjacency[v]) terms.push_back(w / out_weight[u] * res.scores[u]);
            next[v] = (1.0 - opt.damping) + opt.damping * detail::sorted_sum(terms);
            delta = std::max(delta, std::abs(next[v] - res.scores[v]));
        }
        res.scores.swap(next);
        ++res.iterations;
        if (delta < opt.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

/// The k highest-scoring tokens, score-descending, ties broken by token
/// ascending. Returns everything when fewer than k are available.
inline std::vector<std::string> top_k_keywords(const std::vector<std::string>& tokens, const std::vector<double>& scores,
                                               std::size_t k) {
    if (k == 0) throw InvalidArgument("top_k_keywords: k must be >= 1");
    if (tokens.size() != scores.size()) throw InvalidArgument("top_k_keywords: size mismatch");
    std::vector<std::size_t> order(tokens.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return tokens[a] < tokens[b];
    });
    order.resize(std::min(k, order.size()));
    std::vector<std::string> out;
    for (auto i : order) out.push_back(tokens[i]);
    return out;
}

inline std::vector<std::string> top_k_keywords(const CooccurrenceGraph& graph, const std::vector<double>& scores,
                                               std::size_t k) {
    return top_k_keywords(graph.nodes, scores, k);
}

/// w = 1 + ln(n) for n >= 1.
inline double keyword_weight(std::uint64_t count) {
    if (count == 0) throw InvalidArgument("keyword_weight: count must be >= 1");
    return 1.0 + std::log(static_cast<double>(count));
}

enum class Provenance { task, lexicon, both };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::task: return "task";
        case Provenance::lexicon: return "lexicon";
        case Provenance::both: return "both";
    }
    return "?";
}

inline Provenance parse_provenance(std::string_view s) {
    if (s == "task") return Provenance::task;
    if (s == "lexicon") return Provenance::lexicon;
    if (s == "both") return Provenance::both;
    throw FormatError("keywords: unknown provenance '" + std::string(s) + "'");
}

struct WeightedKeyword {
    std::string keyword;
    std::uint64_t count = 0;
    double weight = 1.0;
    Provenance provenance = Provenance::task;

    bool operator==(const WeightedKeyword&) const = default;
};

/// Fused keyword set; entries kept sorted by weight descending then keyword.
struct DomainKeywordSet {
    std::vector<WeightedKeyword> entries;

    std::size_t size() const noexcept { return entries.size(); }
    const WeightedKeyword* find(std::string_view keyword) const {
        for (const auto& e : entries)
            if (e.keyword == keyword) return &e;
        return nullptr;
    }
    bool operator==(const DomainKeywordSet&) const = default;
};

inline void sort_keywords(std::vector<WeightedKeyword>& v) {
    std::sort(v.begin(), v.end(), [](const WeightedKeyword& a, const WeightedKeyword& b) {
        if (a.weight != b.weight) return a.weight > b.weight;
        return a.keyword < b.keyword;
    });
}

struct KeywordOptions {
    std::size_t window = 5;
    std::size_t top_k = 5;
    TextRankOptions textrank;
    CandidateFilter filter = default_candidate_filter();
};

/// Top-k keywords of a single sample.
inline std::vector<std::string> sample_keywords(std::string_view sample, const Tokenizer& tokenizer,
                                                const KeywordOptions& opt = {}) {
    auto tokens = filter_candidates(tokenizer.tokenize(sample), opt.filter);
    auto graph = build_graph(tokens, opt.window);
    auto rank = textrank(graph, opt.textrank);
    if (graph.size() == 0) return {};
    return top_k_keywords(graph, rank.scores, opt.top_k);
}

/// Task keyword set: the union of per-sample top-k lists, where a keyword's
/// count is the number of samples whose top-k contains it.
inline std::vector<WeightedKeyword> extract_task_keywords(const std::vector<std::string>& samples,
                                                          const Tokenizer& tokenizer, const KeywordOptions& opt = {}) {
    if (samples.empty()) throw InvalidArgument("extract_task_keywords: no samples");
    std::map<std::string, std::uint64_t> counts;
    for (const auto& s : samples)
        for (auto& kw : sample_keywords(s, tokenizer, opt)) ++counts[kw];
    std::vector<WeightedKeyword> out;
    out.reserve(counts.size());
    for (auto& [kw, n] : counts) out.push_back({kw, n, keyword_weight(n), Provenance::task});
    sort_keywords(out);
    return out;
}

/// Union by exact match. Entries in both keep the task count and weight;
/// lexicon-only entries get count 0 and weight 1.
inline DomainKeywordSet fuse(const std::vector<WeightedKeyword>& task, const std::vector<std::string>& lexicon) {
    std::map<std::string, WeightedKeyword> merged;
    for (const auto& k : task) merged[k.keyword] = {k.keyword, k.count, k.weight, Provenance::task};
    for (const auto& word : lexicon) {
        if (word.empty()) continue;
        auto it = merged.find(word);
        if (it == merged.end())
            merged.emplace(word, WeightedKeyword{word, 0, 1.0, Provenance::lexicon});
        else if (it->second.provenance == Provenance::task)
            it->second.provenance = Provenance::both;
    }
    DomainKeywordSet set;
    for (auto& [_, k] : merged) set.entries.push_back(std::move(k));
    sort_keywords(set.entries);
    return set;
}

// Keyword file: "keyword<TAB>count<TAB>weight<TAB>provenance" per line, in
// DomainKeywordSet order. Weights use the shortest round-trip representation.

inline std::string serialize_keywords(const DomainKeywordSet& set) {
    std::string out;
    char buf[64];
    for (const auto& e : set.entries) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, e.weight);
        out += e.keyword;
        out += '\t' + std::to_string(e.count) + '\t';
        out.append(buf, p);
        out += '\t';
        out += to_string(e.provenance);
        out += '\n';
    }
    return out;
}

inline DomainKeywordSet parse_keywords(std::string_view text) {
    DomainKeywordSet set;
    std::size_t line_no = 0;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        for (std::size_t s = 0;;) {
            auto t = line.find('\t', s);
            f.push_back(line.substr(s, t - s));
            if (t == std::string_view::npos) break;
            s = t + 1;
        }
        if (f.size() != 4) throw FormatError("keywords: line " + std::to_string(line_no) + " needs 4 fields");
        WeightedKeyword k;
        k.keyword = std::string(f[0]);
        auto r1 = std::from_chars(f[1].data(), f[1].data() + f[1].size(), k.count);
        auto r2 = std::from_chars(f[2].data(), f[2].data() + f[2].size(), k.weight);
        if (r1.ec != std::errc{} || r2.ec != std::errc{} || r1.ptr != f[1].data() + f[1].size() ||
            r2.ptr != f[2].data() + f[2].size())
            throw FormatError("keywords: bad number on line " + std::to_string(line_no));
        k.provenance = parse_provenance(f[3]);
        set.entries.push_back(std::move(k));
    }
    sort_keywords(set.entries);
    std::set<std::string_view> seen;
    for (const auto& e : set.entries)
        if (!seen.insert(e.keyword).second) throw FormatError("keywords: duplicate keyword '" + e.keyword + "'");
    return set;
}

/// Lexicon: one word per line; blank lines and surrounding whitespace ignored.
inline std::vector<std::string> parse_lexicon(std::string_view text) {
    std::vector<std::string> words;
    while (!text.empty()) {
        auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
        while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
        if (!line.empty()) words.emplace_back(line);
    }
    return words;
}

}  // namespace domada
