#include <gtest/gtest.h>

#include <domada/keyword_extract.hpp>
#include <domada/random.hpp>

#include <cmath>
#include <numeric>

using namespace domada;

namespace {

const CjkCharTokenizer kTok;

// Builds a graph directly from an edge list with unit or given weights.
CooccurrenceGraph make_graph(std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& edges) {
    CooccurrenceGraph g;
    for (std::size_t i = 0; i < n; ++i) g.nodes.push_back("n" + std::to_string(i));
    std::vector<std::map<std::size_t, double>> adj(n);
    for (auto [u, v, w] : edges) {
        adj[u][v] += w;
        adj[v][u] += w;
    }
    g.adjacency.resize(n);
    for (std::size_t u = 0; u < n; ++u) g.adjacency[u].assign(adj[u].begin(), adj[u].end());
    return g;
}

// Fixed point of x = (1-d) + d*M*x by Gaussian elimination with partial pivoting.
std::vector<double> textrank_fixed_point(const CooccurrenceGraph& g, double d) {
    const std::size_t n = g.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t u = 0; u < n; ++u)
        for (auto [v, w] : g.adjacency[u]) out[u] += w;
    std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
    for (std::size_t v = 0; v < n; ++v) {
        a[v][v] = 1.0;
        a[v][n] = 1.0 - d;
        for (auto [u, w] : g.adjacency[v]) a[v][u] -= d * w / out[u];
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
        std::swap(a[c], a[piv]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k <= n; ++k) a[r][k] -= f * a[c][k];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = a[i][n] / a[i][i];
    return x;
}

CooccurrenceGraph random_connected_graph(Rng& rng, std::size_t n) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (std::size_t v = 1; v < n; ++v) edges.emplace_back(rng.below(v), v, 1.0);
    for (std::size_t e = 0; e < n; ++e) {
        auto u = rng.below(n), v = rng.below(n);
        if (u != v) edges.emplace_back(u, v, 1.0);
    }
    return make_graph(n, edges);
}

CooccurrenceGraph relabel(const CooccurrenceGraph& g, const std::vector<std::size_t>& perm) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
    for (std::size_t u = 0; u < g.size(); ++u)
        for (auto [v, w] : g.adjacency[u])
            if (u < v) edges.emplace_back(perm[u], perm[v], w);
    return make_graph(g.size(), edges);
}

}  // namespace

TEST(Graph, WindowPairsAreSymmetricWithoutSelfEdges) {
    std::vector<std::string> toks = {"a", "b", "a", "c", "d"};
    auto g = build_graph(toks, 3);
    ASSERT_EQ(g.size(), 4u);
    auto a = g.index_of("a"), b = g.index_of("b"), c = g.index_of("c"), d = g.index_of("d");
    EXPECT_EQ(g.weight(a, b), 2.0);  // (0,1) and (1,2)
    EXPECT_EQ(g.weight(a, c), 1.0);
    EXPECT_EQ(g.weight(b, c), 1.0);
    EXPECT_EQ(g.weight(a, d), 1.0);
    EXPECT_EQ(g.weight(b, d), 0.0);  // positions 1 and 4 are 3 apart
    EXPECT_EQ(g.weight(c, d), 1.0);
    EXPECT_EQ(g.weight(a, a), 0.0);
    for (std::size_t u = 0; u < g.size(); ++u)
        for (auto [v, w] : g.adjacency[u]) {
            EXPECT_NE(u, v);
            EXPECT_GE(w, 1.0);
            EXPECT_EQ(g.weight(v, u), w);
        }
}

TEST(Graph, RejectsWindowBelowTwo) {
    EXPECT_THROW(build_graph({"a", "b"}, 1), InvalidArgument);
}

TEST(Graph, FilterDropsStopwordsAndSingleLatin) {
    auto f = default_candidate_filter();
    std::vector<std::string> toks = {"的", "黄", "x", "qi", "the"};
    std::vector<std::string> want = {"黄", "qi"};
    EXPECT_EQ(filter_candidates(toks, f), want);
}

TEST(TextRank, TwoNodeGraphConvergesToOne) {
    auto r = textrank(make_graph(2, {{0, 1, 1.0}}));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.scores[0], 1.0, 1e-6);
    EXPECT_NEAR(r.scores[1], 1.0, 1e-6);
}

TEST(TextRank, ThreeNodePathMatchesHandSolvedFixedPoint) {
    // Ends: x = 0.15 + 0.85*y/2, middle: y = 0.15 + 0.85*2x.
    double x = (0.15 + 0.85 * 0.15 / 2) / (1 - 0.85 * 0.85);
    double y = 0.15 + 1.7 * x;
    auto r = textrank(make_graph(3, {{0, 1, 1.0}, {1, 2, 1.0}}));
    EXPECT_TRUE(r.converged);
    EXPECT_NEAR(r.scores[0], x, 1e-4);
    EXPECT_NEAR(r.scores[1], y, 1e-4);
    EXPECT_NEAR(r.scores[2], x, 1e-4);
    EXPECT_NEAR(x, 0.7703, 1e-4);
    EXPECT_NEAR(y, 1.4595, 1e-4);
}

TEST(TextRank, MatchesLinearSolveOnRandomWeightedGraphs) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 2 + rng.below(15);
        auto g = random_connected_graph(rng, n);
        for (auto& row : g.adjacency)
            for (auto& [v, w] : row) w = 1.0;  // keep symmetric
        auto want = textrank_fixed_point(g, 0.85);
        auto got = textrank(g, {.damping = 0.85, .tol = 1e-12, .max_iter = 10000});
        ASSERT_TRUE(got.converged);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got.scores[i], want[i], 1e-8);
    }
}

TEST(TextRank, ConvergesAndIsBoundedBelowOnConnectedUnitGraphs) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = random_connected_graph(rng, 2 + rng.below(30));
        auto r = textrank(g);
        EXPECT_TRUE(r.converged);
        EXPECT_LT(r.iterations, 100u);
        for (double s : r.scores) EXPECT_GE(s, 0.15 - 1e-12);
    }
}

TEST(TextRank, IsExactlyPermutationEquivariant) {
    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        std::size_t n = 2 + rng.below(25);
        auto g = random_connected_graph(rng, n);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        auto a = textrank(g);
        auto b = textrank(relabel(g, perm));
        ASSERT_EQ(a.iterations, b.iterations);
        for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(a.scores[i], b.scores[perm[i]]) << "trial " << trial;
    }
}

TEST(TextRank, SymmetricNodesScoreEqually) {
    // Star: all leaves form one automorphism orbit.
    auto r = textrank(make_graph(6, {{0, 1, 1}, {0, 2, 1}, {0, 3, 1}, {0, 4, 1}, {0, 5, 1}}));
    for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(r.scores[i], r.scores[1]);
    // Cycle: every node is equivalent.
    auto c = textrank(make_graph(5, {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 4, 1}, {4, 0, 1}}));
    for (double s : c.scores) EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(TextRank, IsolatedNodesKeepFloorScore) {
    auto r = textrank(make_graph(3, {{0, 1, 1.0}}));
    EXPECT_NEAR(r.scores[2], 0.15, 1e-12);
}

TEST(TextRank, RejectsBadOptions) {
    auto g = make_graph(2, {{0, 1, 1.0}});
    EXPECT_THROW(textrank(g, {.damping = 1.0}), InvalidArgument);
    EXPECT_THROW(textrank(g, {.damping = 0.85, .tol = 0.0}), InvalidArgument);
}

TEST(TopK, BreaksTiesLexicographically) {
    std::vector<std::string> toks = {"c", "a", "b", "d"};
    std::vector<double> scores = {1.0, 1.0, 2.0, 0.5};
    std::vector<std::string> want = {"b", "a", "c"};
    EXPECT_EQ(top_k_keywords(toks, scores, 3), want);
    EXPECT_EQ(top_k_keywords(toks, scores, 10).size(), 4u);
    EXPECT_THROW(top_k_keywords(toks, scores, 0), InvalidArgument);
}

TEST(Weight, MatchesNaturalLogFormula) {
    EXPECT_NEAR(keyword_weight(1), 1.0, 1e-6);
    EXPECT_NEAR(keyword_weight(10), 3.302585, 1e-6);
    EXPECT_NEAR(keyword_weight(100), 5.605170, 1e-6);
    EXPECT_EQ(keyword_weight(1), 1.0);
    for (std::uint64_t n = 1; n < 1000; ++n) EXPECT_LT(keyword_weight(n), keyword_weight(n + 1));
    EXPECT_THROW(keyword_weight(0), InvalidArgument);
}

TEST(TaskKeywords, CountsSamplesContainingKeyword) {
    KeywordOptions opt;
    opt.top_k = 3;
    std::vector<std::string> samples = {"黄芪补气黄芪补气", "黄芪补气固表", "当归补血活血"};
    auto kws = extract_task_keywords(samples, kTok, opt);
    std::map<std::string, std::uint64_t> counts;
    for (const auto& k : kws) counts[k.keyword] = k.count;
    // Oracle: count samples whose own top-k contains the keyword.
    std::map<std::string, std::uint64_t> expect;
    for (const auto& s : samples)
        for (const auto& k : sample_keywords(s, kTok, opt)) ++expect[k];
    EXPECT_EQ(counts, expect);
    for (const auto& k : kws) {
        EXPECT_EQ(k.weight, keyword_weight(k.count));
        EXPECT_EQ(k.provenance, Provenance::task);
    }
    EXPECT_THROW(extract_task_keywords({}, kTok), InvalidArgument);
}

TEST(TaskKeywords, SampleOrderDoesNotMatter) {
    std::vector<std::string> samples = {"黄芪补气固表止汗", "当归补血活血调经", "人参大补元气", "补气养血"};
    auto a = extract_task_keywords(samples, kTok);
    std::reverse(samples.begin(), samples.end());
    EXPECT_EQ(a, extract_task_keywords(samples, kTok));
}

TEST(Fuse, IsSupersetOfBothWithoutDuplicates) {
    std::vector<WeightedKeyword> task = {{"气", 10, keyword_weight(10), Provenance::task},
                                         {"血", 1, 1.0, Provenance::task}};
    std::vector<std::string> lex = {"血", "脾胃", "脾胃", ""};
    auto set = fuse(task, lex);
    ASSERT_EQ(set.size(), 3u);
    EXPECT_EQ(set.entries[0].keyword, "气");
    EXPECT_EQ(set.find("血")->provenance, Provenance::both);
    EXPECT_EQ(set.find("血")->count, 1u);
    EXPECT_EQ(set.find("脾胃")->provenance, Provenance::lexicon);
    EXPECT_EQ(set.find("脾胃")->count, 0u);
    EXPECT_EQ(set.find("脾胃")->weight, 1.0);
    std::set<std::string> uniq;
    for (const auto& e : set.entries) EXPECT_TRUE(uniq.insert(e.keyword).second);
}

TEST(KeywordFile, RoundTripsExactly) {
    std::vector<WeightedKeyword> task;
    for (std::uint64_t n : {1, 3, 7, 10, 100}) task.push_back({"k" + std::to_string(n), n, keyword_weight(n), Provenance::task});
    auto set = fuse(task, {"k3", "lex"});
    auto text = serialize_keywords(set);
    auto back = parse_keywords(text);
    EXPECT_EQ(back, set);
    EXPECT_EQ(serialize_keywords(back), text);
    EXPECT_EQ(text.substr(0, text.find('\n')), "k100\t100\t5.605170185988092\ttask");
}

TEST(KeywordFile, RejectsMalformedLines) {
    EXPECT_THROW(parse_keywords("a\t1\t1.0\n"), FormatError);
    EXPECT_THROW(parse_keywords("a\tx\t1.0\ttask\n"), FormatError);
    EXPECT_THROW(parse_keywords("a\t1\t1.0\tsomething\n"), FormatError);
    EXPECT_THROW(parse_keywords("a\t1\t1\ttask\na\t1\t1\tlexicon\n"), FormatError);
}

TEST(Lexicon, IgnoresBlankLinesAndWhitespace) {
    std::vector<std::string> want = {"黄芪", "当归"};
    EXPECT_EQ(parse_lexicon("  黄芪 \r\n\n当归\n"), want);
}
