#include "relrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace relrec {

using json = nlohmann::json;

namespace {

double dcg(std::span<const int> grades, std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += (std::exp2(grades[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
}

}  // namespace

double ndcg(std::span<const int> grades, std::size_t k) {
    if (k == 0 || k > grades.size()) k = grades.size();
    std::vector<int> ideal(grades.begin(), grades.end());
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    const double best = dcg(ideal, k);
    if (best <= 0.0) return 0.0;
    return dcg(grades, k) / best;
}

double pr_auc(std::span<const double> scores, std::span<const int> labels, Interpolation interpolation) {
    if (scores.size() != labels.size()) throw std::invalid_argument("pr_auc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t positives = 0;
    for (int l : labels) positives += l > 0;
    if (positives == 0) return 0.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    const double npos = static_cast<double>(positives);
    std::size_t tp = 0, fp = 0, prev_tp = 0;
    double prev_recall = 0.0, prev_precision = -1.0;
    double area = 0.0;
    for (std::size_t i = 0; i < n;) {
        // a threshold admits every result tied at its score
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] > 0 ? tp : fp) += 1;
            ++j;
        }
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / npos;
        if (interpolation == Interpolation::step) {
            area += static_cast<double>(tp - prev_tp) / npos * precision;
        } else {
            if (prev_precision < 0.0) prev_precision = precision;
            area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        }
        prev_tp = tp;
        prev_recall = recall;
        prev_precision = precision;
        i = j;
    }
    return area;
}

double precision_position_auc(std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    double hits = 0.0, sum = 0.0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        hits += labels[k] > 0;
        sum += hits / static_cast<double>(k + 1);
    }
    return sum / static_cast<double>(labels.size());
}

std::string report_to_json(const MetricReport& r) {
    json j;
    j["sessions"] = r.sessions;
    j["sessions_with_saves"] = r.sessions_with_saves;
    j["sessions_with_engagement"] = r.sessions_with_engagement;
    j["results"] = r.results;
    j["ndcg"] = r.ndcg;
    j["pr_auc_save"] = r.pr_auc_save;
    j["pr_auc_engaged"] = r.pr_auc_engaged;
    j["pr_auc_engaged_linear"] = r.pr_auc_engaged_linear;
    j["precision_position_auc_save"] = r.precision_position_auc_save;
    j["precision_position_auc_engaged"] = r.precision_position_auc_engaged;
    return j.dump(2);
}

MetricReport offline_eval(const RankingModel& model, const Featurizer& featurizer, const EngagementLog& holdout,
                          std::optional<std::int64_t> training_max_timestamp, std::size_t ndcg_k) {
    if (training_max_timestamp && !holdout.sessions().empty() &&
        holdout.min_timestamp() <= *training_max_timestamp) {
        throw Error("holdout must start after the training date range (holdout starts at " +
                    std::to_string(holdout.min_timestamp()) + ", training ends at " +
                    std::to_string(*training_max_timestamp) + ")");
    }
    MetricReport rep;
    for (const auto& session : holdout.sessions()) {
        struct Scored {
            double score;
            std::string signature;
            int grade;
        };
        std::vector<Scored> scored;
        for (const auto& r : session.results) {
            auto fv = featurizer.features(session.query_signature, session.context, r.result_signature, r.source,
                                          r.generator_score);
            if (!fv) continue;
            scored.push_back({model.score(*fv), r.result_signature, action_grade(r.best_action)});
        }
        if (scored.empty()) continue;
        std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
            return a.score != b.score ? a.score > b.score : a.signature < b.signature;
        });
        ++rep.sessions;
        rep.results += scored.size();
        std::vector<int> grades, saved, engaged;
        std::vector<double> scores;
        for (const auto& s : scored) {
            grades.push_back(s.grade);
            saved.push_back(s.grade == action_grade(Action::save));
            engaged.push_back(s.grade > 0);
            scores.push_back(s.score);
        }
        if (std::any_of(engaged.begin(), engaged.end(), [](int x) { return x > 0; })) {
            ++rep.sessions_with_engagement;
            rep.ndcg += ndcg(grades, ndcg_k);
            rep.pr_auc_engaged += pr_auc(scores, engaged);
            rep.pr_auc_engaged_linear += pr_auc(scores, engaged, Interpolation::linear);
            rep.precision_position_auc_engaged += precision_position_auc(engaged);
        }
        if (std::any_of(saved.begin(), saved.end(), [](int x) { return x > 0; })) {
            ++rep.sessions_with_saves;
            rep.pr_auc_save += pr_auc(scores, saved);
            rep.precision_position_auc_save += precision_position_auc(saved);
        }
    }
    auto mean = [](double& v, std::size_t n) { v = n > 0 ? v / static_cast<double>(n) : 0.0; };
    mean(rep.ndcg, rep.sessions_with_engagement);
    mean(rep.pr_auc_engaged, rep.sessions_with_engagement);
    mean(rep.pr_auc_engaged_linear, rep.sessions_with_engagement);
    mean(rep.precision_position_auc_engaged, rep.sessions_with_engagement);
    mean(rep.pr_auc_save, rep.sessions_with_saves);
    mean(rep.precision_position_auc_save, rep.sessions_with_saves);
    return rep;
}

}  // namespace relrec
