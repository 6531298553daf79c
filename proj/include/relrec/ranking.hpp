#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"
#include "relrec/features.hpp"
#include "relrec/memboost.hpp"

namespace relrec {

// ---------------------------------------------------------------------------
// training data

/// Rows of features with pointwise labels and, for pairwise objectives,
/// preference pairs over row indices.
struct ExampleSet {
    struct Row {
        std::vector<double> features;
        double label = 0.0;  // 1 when saved
        double weight = 1.0;
        Action best_action = Action::impression;
        std::string session_id;
        std::string signature;
        int rank_shown = 0;
    };
    struct Pair {
        std::uint32_t preferred;
        std::uint32_t other;
        double weight = 1.0;
    };

    std::vector<Row> rows;
    std::vector<Pair> pairs;
    std::uint64_t fingerprint = 0;
    std::vector<std::string> feature_names;
    std::size_t skipped = 0;  // results dropped for missing corpus records

    std::size_t dim() const { return rows.empty() ? 0 : rows.front().features.size(); }
    void append(const ExampleSet& other);
};

enum class SessionMode { pointwise, pairs };

/// Keeps engaged results plus the two results shown just before each.
std::vector<std::size_t> trimmed_positions(const Session& session);

/// positive_class_weight <= 0 means #negatives / #positives.
ExampleSet collect_session_data(const EngagementLog& log, const Featurizer& featurizer, SessionMode mode,
                                double positive_class_weight = 0.0);

/// Per query with scored results: (top MB, bottom MB) when they differ and
/// (bottom MB, popularity-weighted random pin). The random pin is resampled
/// until it differs from both and from the query.
ExampleSet collect_memboost_pairs(const MemboostStore& store, const Featurizer& featurizer,
                                  const MemboostParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// models

struct LinearModel {
    std::vector<double> weights;
};

struct RegressionTree {
    struct Node {
        int feature = -1;  // -1 for leaves
        double threshold = 0.0;  // x <= threshold goes left
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    std::vector<Node> nodes;

    double predict(std::span<const double> x) const;
};

struct GbdtModel {
    std::vector<RegressionTree> trees;
    double shrinkage = 0.1;
};

enum class Objective { ranksvm, ranknet, logistic };

std::string_view to_string(Objective o);
Objective parse_objective(std::string_view s);

class SchemaMismatch : public Error {
  public:
    using Error::Error;
};

struct RankingModel {
    std::variant<LinearModel, GbdtModel> model;
    Objective objective = Objective::ranksvm;
    std::uint64_t fingerprint = 0;
    std::vector<std::string> feature_names;
    std::map<std::string, std::string> metadata;

    bool is_linear() const { return std::holds_alternative<LinearModel>(model); }
    /// Throws SchemaMismatch when the fingerprints differ.
    double score(const FeatureVector& fv) const;
    double score_raw(std::span<const double> x) const;
};

void save_model(const RankingModel& model, const std::filesystem::path& path);
RankingModel load_model(const std::filesystem::path& path);
std::string model_to_json(const RankingModel& model);
RankingModel model_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// training

struct LinearParams {
    double C = 1.0;
    std::size_t epochs = 200;
    std::uint64_t seed = 0;
};

/// Minimizes 0.5 * |w|^2 + C * sum of weighted pairwise hinge losses by
/// dual coordinate ascent over pairs in seeded random order.
RankingModel train_linear(const ExampleSet& data, const LinearParams& params);

/// Mean over pairs of weight * max(0, 1 - w.(x_preferred - x_other)).
double pairwise_hinge_loss(const ExampleSet& data, std::span<const double> weights);

struct GbdtParams {
    std::size_t num_trees = 100;
    std::size_t max_depth = 4;
    double shrinkage = 0.1;
    std::size_t min_leaf = 10;
    double subsample = 1.0;
    double leaf_l2 = 1e-3;
    std::uint64_t seed = 0;
};

/// Gradient boosting of regression trees fit to the negative gradient with
/// squared-error splits (exact search) and Newton leaf values. ranknet uses
/// the data's pairs; logistic uses labels and weights.
RankingModel train_gbdt(const ExampleSet& data, Objective objective, const GbdtParams& params);

// ---------------------------------------------------------------------------
// ranking

/// Scores each candidate and sorts by score, ties by signature. Candidates
/// missing from the corpus are dropped.
std::vector<ScoredResult> rank(const RankingModel& model, const Featurizer& featurizer, std::string_view query,
                               const UserContext& user, const std::vector<CandidateEntry>& candidates);

// ---------------------------------------------------------------------------
// tuning

struct HyperParams {
    enum class Variant { linear, gbdt } variant = Variant::gbdt;
    Objective objective = Objective::logistic;
    LinearParams linear;
    GbdtParams gbdt;
    double positive_class_weight = 0.0;  // <= 0: #neg / #pos
};

/// A range per tunable parameter; a parameter absent from the space keeps
/// the value in `base`.
struct HyperSpace {
    struct Range {
        double lo;
        double hi;
        bool log_scale = false;
        bool integer = false;
    };
    HyperParams base;
    std::map<std::string, Range> ranges;  // num_trees, max_depth, shrinkage, min_leaf, subsample, C, positive_class_weight
};

HyperSpace parse_hyper_space(std::string_view json_text);
std::string hyper_params_to_json(const HyperParams& hp);
HyperParams hyper_params_from_json(std::string_view json_text);

/// The i-th trial of the seeded random search (independent of parallelism).
std::vector<HyperParams> sample_trials(const HyperSpace& space, std::size_t trials, std::uint64_t seed);

struct TuneResult {
    HyperParams best;
    double best_score = 0.0;
    std::size_t best_trial = 0;
    std::vector<double> trial_scores;
};

/// Evaluates every trial (concurrently when parallelism > 1) and returns the
/// best; ties go to the earliest trial.
TuneResult tune(const HyperSpace& space, const std::function<double(const HyperParams&)>& evaluate,
                std::size_t trials, unsigned parallelism, std::uint64_t seed);

/// Pairwise objectives train on pairs, the rest on pointwise rows.
inline SessionMode session_mode_for(const HyperParams& hp) {
    return hp.variant == HyperParams::Variant::linear || hp.objective == Objective::ranknet ? SessionMode::pairs
                                                                                            : SessionMode::pointwise;
}

/// Trains the configured variant on data gathered for it.
RankingModel train_model(const ExampleSet& data, const HyperParams& hp);

}  // namespace relrec
