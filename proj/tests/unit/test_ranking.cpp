#include "doctest.h"
#include "fixtures.hpp"

#include <cmath>
#include <set>

#include "relrec/ranking.hpp"

using namespace relrec;
using namespace relrec::testing;

namespace {

Session session_with(std::vector<Action> actions) {
    Session s;
    s.session_id = "s";
    s.query_signature = "q";
    for (std::size_t i = 0; i < actions.size(); ++i) {
        SessionResult r;
        r.result_signature = "r" + std::to_string(i);
        r.best_action = actions[i];
        r.rank = static_cast<int>(i);
        s.results.push_back(r);
    }
    return s;
}

ExampleSet::Row row(std::vector<double> x, double label = 0.0) {
    ExampleSet::Row r;
    r.features = std::move(x);
    r.label = label;
    return r;
}

ExampleSet xor_data(int copies) {
    ExampleSet d;
    for (int c = 0; c < copies; ++c) {
        d.rows.push_back(row({0, 0}, 0));
        d.rows.push_back(row({1, 1}, 0));
        d.rows.push_back(row({0, 1}, 1));
        d.rows.push_back(row({1, 0}, 1));
    }
    return d;
}

void add_all_label_pairs(ExampleSet& d) {
    for (std::uint32_t i = 0; i < d.rows.size(); ++i) {
        for (std::uint32_t j = 0; j < d.rows.size(); ++j) {
            if (d.rows[i].label > d.rows[j].label) d.pairs.push_back({i, j, 1.0});
        }
    }
}

/// Accuracy of the best single threshold on the model's scores.
double best_threshold_accuracy(const RankingModel& m, const ExampleSet& d) {
    std::vector<std::pair<double, double>> s;
    for (const auto& r : d.rows) s.emplace_back(m.score_raw(r.features), r.label);
    std::sort(s.begin(), s.end());
    double best = 0.0;
    for (std::size_t cut = 0; cut <= s.size(); ++cut) {
        // predict positive for indices >= cut (and, separately, for < cut)
        double hi = 0, lo = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            bool positive_side = i >= cut;
            // only cut between distinct scores
            hi += (positive_side == (s[i].second > 0.5));
            lo += (positive_side != (s[i].second > 0.5));
        }
        if (cut > 0 && cut < s.size() && s[cut - 1].first == s[cut].first) continue;
        best = std::max({best, hi / s.size(), lo / s.size()});
    }
    return best;
}

double cosine_sim(const std::vector<double>& a, const std::vector<double>& b) { return cosine(a, b); }

}  // namespace

TEST_CASE("trimming: engaged results plus the two shown before them") {
    using A = Action;
    auto s = session_with({A::impression, A::impression, A::impression, A::impression, A::impression, A::save,
                           A::impression, A::impression});
    CHECK(trimmed_positions(s) == std::vector<std::size_t>{3, 4, 5});
    CHECK(trimmed_positions(session_with({A::impression, A::impression, A::impression})).empty());
    CHECK(trimmed_positions(session_with({A::impression, A::save, A::impression})) == std::vector<std::size_t>{0, 1});
    CHECK(trimmed_positions(session_with({A::impression, A::impression, A::click, A::impression, A::closeup})) ==
          std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("session data: pointwise labels, class weights and pairs") {
    std::vector<EngagementEvent> ev;
    auto add = [&](const std::string& r, int rank, std::vector<Action> acts) {
        EngagementEvent e;
        e.session_id = "s";
        e.user_id = "u";
        e.query_signature = "q";
        e.result_signature = r;
        e.platform = "web";
        e.rank = rank;
        ev.push_back(e);
        for (auto a : acts) {
            e.action = a;
            ev.push_back(e);
        }
    };
    add("a", 0, {});
    add("b", 1, {Action::click});
    add("c", 2, {});
    add("d", 3, {Action::closeup, Action::save});
    add("e", 4, {});
    add("zz", 5, {Action::click});  // not in the corpus
    auto log = EngagementLog::from_events(ev);
    auto pins = make_corpus(std::vector<std::string>{"q", "a", "b", "c", "d", "e"});
    FeatureSchema schema;
    Featurizer f(schema, pins);

    auto point = collect_session_data(log, f, SessionMode::pointwise);
    CHECK(point.rows.size() == 5);  // zz itself is dropped, e still precedes it
    CHECK(point.skipped == 1);
    double positives = 0;
    for (const auto& r : point.rows) {
        if (r.label > 0.5) {
            ++positives;
            CHECK(r.signature == "d");
            CHECK(r.weight == doctest::Approx(4.0));  // 4 negatives per positive
        } else {
            CHECK(r.weight == 1.0);
        }
    }
    CHECK(positives == 1);
    CHECK(point.pairs.empty());

    auto fixed = collect_session_data(log, f, SessionMode::pointwise, 10.0);
    for (const auto& r : fixed.rows) CHECK(r.weight == (r.label > 0.5 ? 10.0 : 1.0));

    auto pairs = collect_session_data(log, f, SessionMode::pairs);
    // grades: a, c, e impression; b click; d save -> 4 pairs above d, 3 above b
    CHECK(pairs.pairs.size() == 7);
    for (const auto& p : pairs.pairs) CHECK(pairs.rows[p.preferred].best_action > pairs.rows[p.other].best_action);
}

TEST_CASE("memboost pairs: one result, two results, random pin never r1/rn/query") {
    std::vector<std::string> sigs = {"q1", "q2", "a", "b", "c", "d", "e"};
    auto pins = make_corpus(sigs);
    FeatureSchema schema;
    MemboostStats hot, cold;
    hot.counts = {5, 0, 0, 1};
    cold.expected = {1, 0, 0, 1};
    MemboostStore store({{"q1", "a", hot}, {"q2", "a", hot}, {"q2", "b", cold}});
    Featurizer f(schema, pins, &store);
    MemboostParams params;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto data = collect_memboost_pairs(store, f, params, seed);
        REQUIRE(data.pairs.size() == 3);  // q1: 1 pair, q2: 2 pairs
        std::set<std::string> q2_fixed = {"a", "b", "q2"};
        // rows in order: q1 bottom(a), q1 random, q2 bottom(b), q2 top(a), q2 random
        CHECK(data.rows[0].signature == "a");
        CHECK(data.rows[1].signature != "a");
        CHECK(data.rows[1].signature != "q1");
        CHECK(data.pairs[1].preferred == 3);
        CHECK(data.rows[data.pairs[1].preferred].signature == "a");
        CHECK(data.rows[data.pairs[1].other].signature == "b");
        CHECK(q2_fixed.count(data.rows[4].signature) == 0);
    }
    CHECK(collect_memboost_pairs(store, f, params, 7).rows[1].signature ==
          collect_memboost_pairs(store, f, params, 7).rows[1].signature);
}

TEST_CASE("train_linear: recovers planted weights on separable pairs") {
    Rng rng(3);
    const std::size_t dim = 8;
    std::vector<double> w_star(dim);
    for (auto& x : w_star) x = rng.normal();
    ExampleSet d;
    for (int i = 0; i < 600; ++i) {
        std::vector<double> a(dim), b(dim);
        for (auto& x : a) x = rng.normal();
        for (auto& x : b) x = rng.normal();
        double diff = dot(w_star, a) - dot(w_star, b);
        if (std::abs(diff) < 0.1) continue;
        d.rows.push_back(row(a));
        d.rows.push_back(row(b));
        auto ia = static_cast<std::uint32_t>(d.rows.size() - 2), ib = ia + 1;
        d.pairs.push_back(diff > 0 ? ExampleSet::Pair{ia, ib, 1.0} : ExampleSet::Pair{ib, ia, 1.0});
    }
    auto m = train_linear(d, {10.0, 200, 1});
    CHECK(cosine_sim(std::get<LinearModel>(m.model).weights, w_star) >= 0.9);
    CHECK(m.objective == Objective::ranksvm);
}

TEST_CASE("train_linear: identical pair features leave the weights at zero") {
    ExampleSet d;
    d.rows = {row({1, 2, 3}), row({1, 2, 3})};
    d.pairs = {{0, 1, 1.0}, {1, 0, 1.0}};
    auto m = train_linear(d, {});
    for (double w : std::get<LinearModel>(m.model).weights) CHECK(w == 0.0);
}

TEST_CASE("train_linear: doubling C never increases the training hinge loss") {
    Rng rng(17);
    ExampleSet d;
    for (int i = 0; i < 150; ++i) {
        std::vector<double> a = {rng.normal(), rng.normal(), rng.normal()};
        std::vector<double> b = {rng.normal(), rng.normal(), rng.normal()};
        d.rows.push_back(row(a));
        d.rows.push_back(row(b));
        // noisy preference so the problem is not separable
        bool pref = a[0] + 0.5 * a[1] + rng.normal() > b[0] + 0.5 * b[1];
        auto ia = static_cast<std::uint32_t>(d.rows.size() - 2);
        d.pairs.push_back(pref ? ExampleSet::Pair{ia, ia + 1, 1.0} : ExampleSet::Pair{ia + 1, ia, 1.0});
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double C = 0.001; C <= 10.0; C *= 2.0) {
        auto m = train_linear(d, {C, 2000, 4});
        double loss = pairwise_hinge_loss(d, std::get<LinearModel>(m.model).weights);
        CHECK(loss <= prev + 1e-6);
        prev = loss;
    }
}

TEST_CASE("train_linear: constant feature shift changes no score difference") {
    auto m = RankingModel{};
    m.model = LinearModel{{0.3, -1.2, 2.0}};
    std::vector<double> a = {1, 2, 3}, b = {-1, 0.5, 4};
    double before = m.score_raw(a) - m.score_raw(b);
    a[1] += 7.5;
    b[1] += 7.5;
    CHECK(m.score_raw(a) - m.score_raw(b) == doctest::Approx(before));
}

TEST_CASE("gbdt: a single stump separates a one-feature toy set") {
    ExampleSet d;
    for (int i = 0; i < 10; ++i) d.rows.push_back(row({static_cast<double>(i), 5.0}, i >= 6 ? 1.0 : 0.0));
    GbdtParams p;
    p.num_trees = 1;
    p.max_depth = 1;
    p.min_leaf = 1;
    auto m = train_gbdt(d, Objective::logistic, p);
    const auto& g = std::get<GbdtModel>(m.model);
    REQUIRE(g.trees.size() == 1);
    CHECK(g.trees[0].nodes[0].feature == 0);
    CHECK(g.trees[0].nodes[0].threshold == doctest::Approx(5.5));
    for (const auto& r : d.rows) CHECK((m.score_raw(r.features) > 0) == (r.label > 0.5));
}

TEST_CASE("gbdt: shrinkage 0 scores everything zero") {
    auto d = xor_data(3);
    GbdtParams p;
    p.shrinkage = 0.0;
    p.min_leaf = 1;
    p.num_trees = 5;
    auto m = train_gbdt(d, Objective::logistic, p);
    for (const auto& r : d.rows) CHECK(m.score_raw(r.features) == 0.0);
}

TEST_CASE("gbdt solves XOR where a linear ranker cannot") {
    auto d = xor_data(5);
    GbdtParams p;
    p.num_trees = 20;
    p.max_depth = 2;
    p.min_leaf = 1;
    p.shrinkage = 0.3;
    auto tree_model = train_gbdt(d, Objective::logistic, p);
    double acc = 0;
    for (const auto& r : d.rows) acc += (tree_model.score_raw(r.features) > 0) == (r.label > 0.5);
    CHECK(acc / d.rows.size() == 1.0);

    add_all_label_pairs(d);
    auto lin = train_linear(d, {1.0, 200, 0});
    CHECK(best_threshold_accuracy(lin, d) <= 0.75);

    auto ranknet = train_gbdt(d, Objective::ranknet, p);
    CHECK(best_threshold_accuracy(ranknet, d) == 1.0);
}

TEST_CASE("gbdt: heavy positive weight ranks every training positive above every negative") {
    Rng rng(23);
    ExampleSet d;
    for (int i = 0; i < 200; ++i) {
        double x = rng.uniform(), y = rng.uniform();
        d.rows.push_back(row({x, y}, (x > 0.7 && y > 0.4) ? 1.0 : 0.0));
    }
    HyperParams hp;
    hp.objective = Objective::logistic;
    hp.positive_class_weight = 1e4;
    hp.gbdt.num_trees = 30;
    hp.gbdt.min_leaf = 1;
    auto m = train_model(d, hp);
    double min_pos = 1e300, max_neg = -1e300;
    for (const auto& r : d.rows) {
        double s = m.score_raw(r.features);
        if (r.label > 0.5) min_pos = std::min(min_pos, s);
        else max_neg = std::max(max_neg, s);
    }
    CHECK(min_pos > max_neg);
}

TEST_CASE("gbdt: deterministic per seed with subsampling; bad input rejected") {
    Rng rng(1);
    ExampleSet d;
    for (int i = 0; i < 100; ++i) d.rows.push_back(row({rng.uniform(), rng.uniform()}, rng.bernoulli(0.3)));
    GbdtParams p;
    p.subsample = 0.7;
    p.num_trees = 10;
    auto a = train_gbdt(d, Objective::logistic, p);
    auto b = train_gbdt(d, Objective::logistic, p);
    CHECK(model_to_json(a) == model_to_json(b));
    CHECK_THROWS_AS(train_gbdt(ExampleSet{}, Objective::logistic, p), std::invalid_argument);
    CHECK_THROWS_AS(train_gbdt(d, Objective::ranknet, p), std::invalid_argument);
    d.rows[3].features[0] = std::nan("");
    CHECK_THROWS_AS(train_gbdt(d, Objective::logistic, p), std::invalid_argument);
}

TEST_CASE("model file round-trip keeps scores bit-identical") {
    auto d = xor_data(4);
    GbdtParams p;
    p.min_leaf = 1;
    p.num_trees = 7;
    auto m = train_gbdt(d, Objective::logistic, p);
    m.fingerprint = 0xfeedbeefcafe1234ULL;
    m.metadata["note"] = "x";
    TempDir dir;
    save_model(m, dir / "m.json");
    auto back = load_model(dir / "m.json");
    CHECK(back.fingerprint == m.fingerprint);
    CHECK(back.metadata == m.metadata);
    for (const auto& r : d.rows) CHECK(back.score_raw(r.features) == m.score_raw(r.features));

    RankingModel lin;
    lin.model = LinearModel{{0.1, 1.0 / 3.0}};
    auto lin_back = model_from_json(model_to_json(lin));
    CHECK(std::get<LinearModel>(lin_back.model).weights == std::get<LinearModel>(lin.model).weights);
    CHECK_THROWS_AS(model_from_json("{}"), Error);
}

TEST_CASE("rank: sorted by score with signature ties, order invariant to increasing transforms") {
    FeatureSchema schema;
    auto pins = make_corpus({make_pin("q"), make_pin("a", {}, {}, "en", 5), make_pin("b", {}, {}, "en", 50),
                             make_pin("c", {}, {}, "en", 5), make_pin("d", {}, {}, "en", 1)});
    Featurizer f(schema, pins);
    std::vector<double> w(schema.dim(), 0.0);
    w[schema.index("candidate_popularity")] = 1.0;
    RankingModel m;
    m.model = LinearModel{w};
    m.fingerprint = schema.fingerprint();
    std::vector<CandidateEntry> cands = {{"c", Source::walk, 0}, {"d", Source::walk, 0}, {"b", Source::walk, 0},
                                         {"a", Source::walk, 0}, {"missing", Source::walk, 0}};
    auto out = rank(m, f, "q", UserContext{}, cands);
    std::vector<std::string> order;
    for (const auto& r : out) order.push_back(r.signature);
    CHECK(order == std::vector<std::string>{"b", "a", "c", "d"});

    for (auto& x : w) x *= 3.0;
    RankingModel scaled = m;
    scaled.model = LinearModel{w};
    auto out2 = rank(scaled, f, "q", UserContext{}, cands);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out2[i].signature == out[i].signature);
}

TEST_CASE("tuning: seeded trials, parallel equals serial, ties go to the earliest") {
    auto space = parse_hyper_space(
        R"({"variant":"gbdt","objective":"logistic","num_trees":[5,50],"shrinkage":[0.01,0.5],"max_depth":3})");
    CHECK(space.base.gbdt.max_depth == 3);
    CHECK(space.ranges.count("num_trees") == 1);
    auto t1 = sample_trials(space, 8, 42);
    auto t2 = sample_trials(space, 8, 42);
    for (std::size_t i = 0; i < t1.size(); ++i) {
        CHECK(t1[i].gbdt.num_trees == t2[i].gbdt.num_trees);
        CHECK(t1[i].gbdt.shrinkage == t2[i].gbdt.shrinkage);
        CHECK(t1[i].gbdt.num_trees >= 5);
        CHECK(t1[i].gbdt.num_trees <= 50);
        CHECK(t1[i].gbdt.shrinkage >= 0.01);
        CHECK(t1[i].gbdt.shrinkage <= 0.5);
    }

    auto d = xor_data(6);
    auto eval = [&](const HyperParams& hp) {
        HyperParams h = hp;
        h.gbdt.min_leaf = 1;
        auto m = train_model(d, h);
        double acc = 0;
        for (const auto& r : d.rows) acc += (m.score_raw(r.features) > 0) == (r.label > 0.5);
        return acc / d.rows.size();
    };
    auto serial = tune(space, eval, 6, 1, 9);
    auto parallel = tune(space, eval, 6, 4, 9);
    CHECK(serial.trial_scores == parallel.trial_scores);
    CHECK(serial.best_trial == parallel.best_trial);

    auto flat = tune(space, [](const HyperParams&) { return 0.5; }, 5, 2, 1);
    CHECK(flat.best_trial == 0);

    CHECK_THROWS_AS(parse_hyper_space(R"({"bogus":[1,2]})"), Error);
    auto hp = hyper_params_from_json(hyper_params_to_json(t1[3]));
    CHECK(hp.gbdt.num_trees == t1[3].gbdt.num_trees);
    CHECK(hp.gbdt.shrinkage == t1[3].gbdt.shrinkage);
}
