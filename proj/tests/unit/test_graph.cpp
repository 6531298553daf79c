#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>

#include "relrec/graph.hpp"

using namespace relrec;
using namespace relrec::testing;

namespace {

BipartiteGraph graph_of(const std::vector<std::vector<std::string>>& boards) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < boards.size(); ++i) ids.push_back("b" + std::to_string(i));
    return BipartiteGraph::from_adjacency(ids, boards);
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

std::vector<double> walk_distribution(const BipartiteGraph& g, const std::string& q, std::uint64_t steps,
                                      std::uint64_t seed) {
    WalkConfig cfg;
    cfg.total_steps = steps;
    cfg.seed = seed;
    auto counts = walk_visit_counts(g, *g.pin_index(q), cfg);
    std::vector<double> d(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) d[i] = static_cast<double>(counts[i]) / static_cast<double>(steps);
    return d;
}

// Dense closed form of the walk's visit distribution:
// v = r * e_q * P * (I - (1 - r) P)^-1, solved by Gaussian elimination.
std::vector<double> dense_ppr(const BipartiteGraph& g, std::uint32_t q, double r) {
    const std::size_t n = g.num_pins();
    std::vector<std::vector<double>> P(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        auto bs = g.boards_of(i);
        for (auto b : bs) {
            auto ps = g.pins_of(b);
            for (auto j : ps) P[i][j] += 1.0 / static_cast<double>(bs.size()) / static_cast<double>(ps.size());
        }
    }
    // Solve v (I - (1-r)P) = r e_q P  <=>  (I - (1-r)P)^T v^T = (r e_q P)^T
    std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) A[i][j] = (i == j ? 1.0 : 0.0) - (1.0 - r) * P[j][i];
        A[i][n] = r * P[q][i];
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t k = c + 1; k < n; ++k) {
            if (std::abs(A[k][c]) > std::abs(A[piv][c])) piv = k;
        }
        std::swap(A[c], A[piv]);
        for (std::size_t k = 0; k < n; ++k) {
            if (k == c) continue;
            double f = A[k][c] / A[c][c];
            for (std::size_t j = c; j <= n; ++j) A[k][j] -= f * A[c][j];
        }
    }
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = A[i][n] / A[i][i];
    return v;
}

}  // namespace

TEST_CASE("build_graph: one board with three pins") {
    auto pins = make_corpus(std::vector<std::string>{"a", "b", "c"});
    auto boards = BoardCorpus::from_boards({make_board("b1", {"a", "b", "c"})}, pins);
    GraphConfig cfg;
    cfg.max_board_degree = 10;
    cfg.max_pin_degree = 10;
    auto g = build_graph(boards, pins, cfg);
    CHECK(g.num_pins() == 3);
    CHECK(g.num_boards() == 1);
    CHECK(g.num_edges() == 3);
}

TEST_CASE("build_graph: board over the degree limit keeps exactly the limit") {
    std::vector<std::string> sigs;
    for (int i = 0; i < 15; ++i) sigs.push_back("p" + std::to_string(i));
    auto pins = make_corpus(sigs);
    auto boards = BoardCorpus::from_boards({make_board("big", sigs)}, pins);
    GraphConfig cfg;
    cfg.max_board_degree = 10;
    auto g = build_graph(boards, pins, cfg);
    CHECK(g.num_edges() == 10);
    CHECK(g.num_pins() == 10);
    // seeded: same seed same subsample
    auto g2 = build_graph(boards, pins, cfg);
    for (std::size_t i = 0; i < g.num_pins(); ++i) CHECK(g.pin_signature(i) == g2.pin_signature(i));
}

TEST_CASE("build_graph: pin degree pruning and node invariants") {
    std::vector<std::string> sigs = {"hub", "a", "b", "c", "d", "e"};
    auto pins = make_corpus(sigs);
    std::vector<Board> bs;
    for (int i = 0; i < 5; ++i) bs.push_back(make_board("b" + std::to_string(i), {"hub", sigs[1 + i]}));
    auto boards = BoardCorpus::from_boards(bs, pins);
    GraphConfig cfg;
    cfg.max_pin_degree = 2;
    auto g = build_graph(boards, pins, cfg);
    CHECK(g.boards_of(*g.pin_index("hub")).size() == 2);
    CHECK(g.max_pin_degree() <= 2);
    for (std::size_t p = 0; p < g.num_pins(); ++p) CHECK(!g.boards_of(p).empty());
    for (std::size_t b = 0; b < g.num_boards(); ++b) CHECK(!g.pins_of(b).empty());
}

TEST_CASE("build_graph: two boards sharing one pin") {
    auto pins = make_corpus(std::vector<std::string>{"a", "b", "c"});
    auto boards = BoardCorpus::from_boards({make_board("b1", {"a", "b"}), make_board("b2", {"b", "c"})}, pins);
    auto g = build_graph(boards, pins);
    CHECK(g.boards_of(*g.pin_index("b")).size() == 2);
}

TEST_CASE("build_graph: empty corpus is an error") {
    CHECK_THROWS_AS(build_graph(BoardCorpus{}, PinCorpus{}), Error);
}

TEST_CASE("build_graph: optional low-relevance pruning drops off-topic pins") {
    auto pins = make_corpus({make_pin("a", {"barn"}, {1, 0, 0}), make_pin("b", {"barn"}, {1, 0, 0}),
                             make_pin("c", {"boat"}, {0, 0, 1})});
    Board b = make_board("b1", {"a", "b", "c"});
    b.title_tokens = {"barn"};
    auto boards = BoardCorpus::from_boards({b}, pins);
    GraphConfig cfg;
    cfg.prune_low_relevance = true;
    cfg.low_relevance_threshold = 0.3;
    auto g = build_graph(boards, pins, cfg);
    CHECK(g.num_pins() == 2);
    CHECK_FALSE(g.pin_index("c").has_value());
    cfg.prune_low_relevance = false;
    CHECK(build_graph(boards, pins, cfg).num_pins() == 3);
}

TEST_CASE("heuristic_relevance examples and properties") {
    auto a = make_pin("a", {"red", "barn"}, {0.5, 0.5, 0.0});
    CHECK(heuristic_relevance(a, a) == doctest::Approx(1.0));
    auto b = make_pin("b", {"blue"}, {0.0, 0.0, 1.0});
    CHECK(heuristic_relevance(a, b) == 0.0);
    // Jaccard({red,barn},{red,barn,farm,sky}) = 0.5, identical categories
    auto c = make_pin("c", {"red", "barn", "farm", "sky"}, {0.5, 0.5, 0.0});
    CHECK(heuristic_relevance(a, c) == doctest::Approx(0.75));
    CHECK(heuristic_relevance(c, a) == heuristic_relevance(a, c));
    auto z = make_pin("z", {}, {0.0, 0.0, 0.0});
    CHECK(heuristic_relevance(z, z) == 0.0);

    Rng rng(7);
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e"};
    for (int t = 0; t < 200; ++t) {
        auto rand_pin = [&](const std::string& sig) {
            std::vector<std::string> toks;
            for (const auto& v : vocab)
                if (rng.bernoulli(0.4)) toks.push_back(v);
            std::vector<double> cat = {rng.uniform(), rng.uniform(), rng.uniform()};
            return make_pin(sig, toks, cat);
        };
        auto x = rand_pin("x");
        auto y = rand_pin("y");
        double s = heuristic_relevance(x, y);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
        CHECK(s == heuristic_relevance(y, x));
    }
}

TEST_CASE("board_cooccurrence: single three-pin board") {
    auto pins = make_corpus(std::vector<std::string>{"q", "a", "b"});
    auto boards = BoardCorpus::from_boards({make_board("b1", {"q", "a", "b"})}, pins);
    auto g = build_graph(boards, pins);
    auto set = board_cooccurrence(g, pins, "q", 10, 1);
    REQUIRE(set.size() == 2);
    for (const auto& e : set.entries) {
        CHECK(e.signature != "q");
        CHECK(e.source == Source::board_cooc);
    }
}

TEST_CASE("board_cooccurrence: sampling is proportional to co-occurrence count") {
    // q shares 5 boards with A and 1 board with B
    auto pins = make_corpus(std::vector<std::string>{"q", "A", "B"});
    std::vector<Board> bs;
    for (int i = 0; i < 5; ++i) bs.push_back(make_board("a" + std::to_string(i), {"q", "A"}));
    bs.push_back(make_board("bb", {"q", "B"}));
    auto g = build_graph(BoardCorpus::from_boards(bs, pins), pins);
    int picked_a = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        auto set = board_cooccurrence(g, pins, "q", 1, static_cast<std::uint64_t>(t) * 7919 + 13);
        REQUIRE(set.size() == 1);
        if (set.entries[0].signature == "A") ++picked_a;
    }
    CHECK(std::abs(static_cast<double>(picked_a) / trials - 5.0 / 6.0) <= 0.05);
}

TEST_CASE("board_cooccurrence: isolated or unknown query gives a flagged empty set") {
    auto pins = make_corpus(std::vector<std::string>{"q", "a", "lonely"});
    auto g = build_graph(BoardCorpus::from_boards({make_board("b", {"q", "a"})}, pins), pins);
    auto set = board_cooccurrence(g, pins, "lonely", 5, 1);
    CHECK(set.empty());
    CHECK(set.status == CandidateStatus::unknown_query);
}

TEST_CASE("random_walk: symmetric siblings get near-equal scores") {
    auto g = graph_of({{"q", "s1", "s2"}});
    WalkConfig cfg;
    cfg.seed = 3;
    auto set = random_walk(g, "q", cfg);
    REQUIRE(set.size() == 2);
    CHECK(std::abs(set.entries[0].generator_score - set.entries[1].generator_score) <= 0.02);
    for (const auto& e : set.entries) CHECK(e.signature != "q");
}

TEST_CASE("random_walk: determinism per seed") {
    auto g = graph_of({{"q", "a", "b"}, {"b", "c"}, {"c", "d", "e"}});
    WalkConfig cfg;
    cfg.seed = 99;
    CHECK(random_walk(g, "q", cfg) == random_walk(g, "q", cfg));
    cfg.seed = 100;
    auto other = random_walk(g, "q", cfg);
    cfg.seed = 99;
    CHECK_FALSE(other == random_walk(g, "q", cfg));
}

TEST_CASE("random_walk: invalid configuration and unknown query") {
    auto g = graph_of({{"q", "a"}});
    WalkConfig cfg;
    cfg.reset_probability = 1.0;
    CHECK_THROWS_AS(random_walk(g, "q", cfg), std::invalid_argument);
    cfg = WalkConfig{};
    cfg.total_steps = 0;
    CHECK_THROWS_AS(random_walk(g, "q", cfg), std::invalid_argument);
    CHECK(random_walk(g, "nope", WalkConfig{}).status == CandidateStatus::unknown_query);
}

TEST_CASE("random_walk: max_results truncates to the most visited") {
    auto g = graph_of({{"q", "a", "b", "c", "d"}, {"q", "a"}});
    WalkConfig cfg;
    cfg.max_results = 1;
    auto set = random_walk(g, "q", cfg);
    REQUIRE(set.size() == 1);
    CHECK(set.entries[0].signature == "a");
}

TEST_CASE("exact_ppr agrees with the dense closed form") {
    auto g = graph_of({{"a", "b", "c"}, {"c", "d"}, {"d", "e", "a"}});
    for (double r : {0.2, 0.5, 0.8}) {
        auto dense = dense_ppr(g, *g.pin_index("a"), r);
        auto iter = exact_ppr(g, "a", r, 1e-14);
        CHECK(l1(dense, iter) < 1e-10);
        double total = 0.0;
        for (double x : iter) total += x;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("random_walk matches exact_ppr on a two-board chain") {
    // 4 pins + 2 boards
    auto g = graph_of({{"a", "b", "c"}, {"c", "d"}});
    auto exact = exact_ppr(g, "a", 0.5);
    auto walk = walk_distribution(g, "a", 100'000, 5);
    CHECK(l1(exact, walk) <= 0.05);
}

TEST_CASE("walk error shrinks as steps grow tenfold") {
    auto g = graph_of({{"p0", "p1", "p2"}, {"p2", "p3", "p4"}, {"p4", "p5", "p0"}, {"p1", "p6"}, {"p6", "p7", "p8"}});
    auto exact = exact_ppr(g, "p0", 0.5);
    double prev = 1e9;
    for (std::uint64_t steps : {1'000ULL, 10'000ULL, 100'000ULL}) {
        double mean_err = 0.0;
        for (std::uint64_t s = 0; s < 10; ++s) mean_err += l1(exact, walk_distribution(g, "p0", steps, 1000 + s));
        mean_err /= 10.0;
        CHECK(mean_err < prev);
        prev = mean_err;
    }
}

TEST_CASE("random_walk reaches pins several hops away") {
    // pin - board - pin - board - pin
    auto g = graph_of({{"near", "mid"}, {"mid", "far"}});
    WalkConfig cfg;
    cfg.seed = 11;
    auto set = random_walk(g, "near", cfg);
    bool found = false;
    for (const auto& e : set.entries) {
        if (e.signature == "far") {
            found = true;
            CHECK(e.generator_score > 0.0);
        }
    }
    CHECK(found);
}
