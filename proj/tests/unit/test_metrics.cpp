#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "relrec/metrics.hpp"

using namespace relrec;
using namespace relrec::testing;

TEST_CASE("ndcg examples") {
    CHECK(ndcg(std::vector<int>{4, 2, 1, 0}) == doctest::Approx(1.0));
    CHECK(ndcg(std::vector<int>{0, 0, 0}) == 0.0);
    CHECK(ndcg(std::vector<int>{}) == 0.0);
    // [0, 4]: 15 / log2(3) over 15 / log2(2)
    CHECK(ndcg(std::vector<int>{0, 4}, 2) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
    CHECK(ndcg(std::vector<int>{0, 4}, 1) == 0.0);
    CHECK(ndcg(std::vector<int>{4, 0}, 1) == 1.0);
}

TEST_CASE("ndcg matches the permutation reference exactly") {
    std::size_t checked = 0;
    for (std::size_t n = 1; n <= 6; ++n) {
        for_each_vector<int>(n, {0, 1, 2, 3, 4}, [&](const std::vector<int>& g) {
            for (std::size_t k : {std::size_t{0}, std::size_t{1}, std::size_t{3}, n}) {
                REQUIRE(ndcg(g, k) == ref_ndcg(g, k));
            }
            ++checked;
        });
    }
    for (std::size_t n = 7; n <= 8; ++n) {
        for_each_vector<int>(n, {0, 1, 4}, [&](const std::vector<int>& g) {
            REQUIRE(ndcg(g) == ref_ndcg(g, 0));
            REQUIRE(ndcg(g, 5) == ref_ndcg(g, 5));
            ++checked;
        });
    }
    CHECK(checked > 20000);
}

TEST_CASE("pr_auc examples") {
    const std::vector<double> s = {0.9, 0.8, 0.7, 0.6};
    const std::vector<int> l = {1, 0, 1, 0};
    CHECK(pr_auc(s, l) == doctest::Approx(0.5 * 1.0 + 0.5 * (2.0 / 3.0)));
    CHECK(pr_auc(s, l, Interpolation::linear) == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0 + 0.5) / 2.0));
    CHECK(pr_auc(s, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK(pr_auc(s, std::vector<int>{0, 0, 0, 0}) == 0.0);
    // one threshold over all-tied scores: precision is the positive rate
    CHECK(pr_auc(std::vector<double>{1, 1, 1, 1}, l) == doctest::Approx(0.5));
    CHECK_THROWS(pr_auc(s, std::vector<int>{1}));
}

TEST_CASE("pr_auc matches the threshold reference exactly") {
    std::size_t checked = 0;
    for (std::size_t n = 1; n <= 8; ++n) {
        for_each_vector<double>(n, {0.0, 0.5, 1.0}, [&](const std::vector<double>& s) {
            for_each_vector<int>(n, {0, 1}, [&](const std::vector<int>& l) {
                REQUIRE(pr_auc(s, l) == ref_pr_auc(s, l, Interpolation::step));
                REQUIRE(pr_auc(s, l, Interpolation::linear) == ref_pr_auc(s, l, Interpolation::linear));
                ++checked;
            });
        });
    }
    CHECK(checked > 1000000);
}

TEST_CASE("pr_auc of random scores is near the positive rate") {
    Rng rng(7);
    std::vector<double> s;
    std::vector<int> l;
    for (int i = 0; i < 20000; ++i) {
        s.push_back(rng.uniform());
        l.push_back(rng.bernoulli(0.3) ? 1 : 0);
    }
    CHECK(pr_auc(s, l) == doctest::Approx(0.3).epsilon(0.05 / 0.3));
    CHECK(pr_auc(s, l, Interpolation::linear) == doctest::Approx(0.3).epsilon(0.05 / 0.3));
}

TEST_CASE("precision_position_auc") {
    CHECK(precision_position_auc(std::vector<int>{}) == 0.0);
    CHECK(precision_position_auc(std::vector<int>{1, 1, 1}) == 1.0);
    CHECK(precision_position_auc(std::vector<int>{0, 0}) == 0.0);
    // precision@k = 0, 1/2, 2/3
    CHECK(precision_position_auc(std::vector<int>{0, 1, 1}) == doctest::Approx((0.5 + 2.0 / 3.0) / 3.0));
    CHECK(precision_position_auc(std::vector<int>{1, 0}) > precision_position_auc(std::vector<int>{0, 1}));
}

namespace {

struct EvalFixture {
    PinCorpus pins = make_corpus({make_pin("q", {}, {1, 0, 0}), make_pin("near", {}, {1, 0, 0}),
                                  make_pin("mid", {}, {0.5, 0.5, 0}), make_pin("far", {}, {0, 1, 0})});
    FeatureSchema schema;
    Featurizer featurizer{schema, pins};
    RankingModel model;

    EvalFixture() {
        LinearModel lm;
        lm.weights.assign(schema.dim(), 0.0);
        lm.weights[schema.index("category_cosine")] = 1.0;
        model.model = lm;
        model.fingerprint = schema.fingerprint();
        model.feature_names = schema.names();
    }
};

void add_session(std::vector<EngagementEvent>& ev, const std::string& id, std::int64_t ts,
                 const std::vector<std::pair<std::string, Action>>& shown) {
    for (std::size_t i = 0; i < shown.size(); ++i) {
        EngagementEvent e;
        e.query_signature = "q";
        e.result_signature = shown[i].first;
        e.platform = "web";
        e.rank = static_cast<int>(i);
        e.user_id = "u";
        e.timestamp = ts;
        e.session_id = id;
        ev.push_back(e);
        if (shown[i].second != Action::impression) {
            e.action = shown[i].second;
            ev.push_back(e);
        }
    }
}

}  // namespace

TEST_CASE("offline_eval rescores the logged results") {
    EvalFixture f;
    std::vector<EngagementEvent> ev;
    // logged order is the reverse of the model's order; metrics ignore it
    add_session(ev, "a", 100, {{"far", Action::impression}, {"mid", Action::impression}, {"near", Action::save}});
    add_session(ev, "b", 200, {{"far", Action::click}, {"near", Action::impression}});
    add_session(ev, "c", 300, {{"near", Action::impression}, {"missing", Action::save}});
    const auto log = EngagementLog::from_events(ev);

    const auto rep = offline_eval(f.model, f.featurizer, log);
    CHECK(rep.sessions == 3);
    CHECK(rep.results == 6);  // "missing" has no corpus record
    CHECK(rep.sessions_with_saves == 1);
    CHECK(rep.sessions_with_engagement == 2);
    CHECK(rep.pr_auc_save == 1.0);
    CHECK(rep.precision_position_auc_save == doctest::Approx((1.0 + 0.5 + 1.0 / 3.0) / 3.0));
    // session a is perfect; in b the clicked result is ranked second
    const double ndcg_b = (std::exp2(action_grade(Action::click)) - 1.0) / std::log2(3.0) /
                          (std::exp2(action_grade(Action::click)) - 1.0);
    CHECK(rep.ndcg == doctest::Approx((1.0 + ndcg_b) / 2.0));
    CHECK(rep.pr_auc_engaged == doctest::Approx((1.0 + 0.5) / 2.0));

    const auto json = report_to_json(rep);
    CHECK(json.find("\"pr_auc_save\"") != std::string::npos);
}

TEST_CASE("offline_eval rejects a holdout overlapping training") {
    EvalFixture f;
    std::vector<EngagementEvent> ev;
    add_session(ev, "a", 100, {{"near", Action::save}});
    const auto log = EngagementLog::from_events(ev);
    CHECK_THROWS_AS(offline_eval(f.model, f.featurizer, log, 100), Error);
    CHECK_THROWS_AS(offline_eval(f.model, f.featurizer, log, 150), Error);
    CHECK_NOTHROW(offline_eval(f.model, f.featurizer, log, 99));
}
