#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relrec/corpus.hpp"
#include "relrec/features.hpp"
#include "relrec/ranking.hpp"

namespace relrec {

/// Gains 2^grade - 1, log2(position + 2) discount, normalized by the ideal
/// ordering of the same grades. k = 0 uses the whole list. All-zero grades
/// give 0.
double ndcg(std::span<const int> grades, std::size_t k = 0);

enum class Interpolation { step, linear };

/// Area under the precision-recall curve traced by lowering a threshold over
/// the distinct scores. step sums precision times recall increments;
/// linear joins consecutive (recall, precision) points, starting from
/// (0, first precision). Labels > 0 are positive. No positives gives 0.
double pr_auc(std::span<const double> scores, std::span<const int> labels,
              Interpolation interpolation = Interpolation::step);

/// Mean over k = 1..n of precision@k for labels in ranked order.
double precision_position_auc(std::span<const int> labels);

struct MetricReport {
    std::size_t sessions = 0;             // sessions scored
    std::size_t sessions_with_saves = 0;
    std::size_t sessions_with_engagement = 0;
    std::size_t results = 0;
    double ndcg = 0.0;                    // mean over sessions with engagement
    double pr_auc_save = 0.0;             // means over sessions with a positive
    double pr_auc_engaged = 0.0;
    double pr_auc_engaged_linear = 0.0;
    double precision_position_auc_save = 0.0;
    double precision_position_auc_engaged = 0.0;
};

std::string report_to_json(const MetricReport& report);

/// Rescores the results each holdout session displayed and measures how
/// well the model's order agrees with the logged actions. Throws Error when
/// the holdout does not start after `training_max_timestamp`.
MetricReport offline_eval(const RankingModel& model, const Featurizer& featurizer, const EngagementLog& holdout,
                          std::optional<std::int64_t> training_max_timestamp = std::nullopt,
                          std::size_t ndcg_k = 10);

}  // namespace relrec
