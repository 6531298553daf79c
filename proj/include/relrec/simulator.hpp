#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"
#include "relrec/memboost.hpp"
#include "relrec/ranking.hpp"

namespace relrec {

// ---------------------------------------------------------------------------
// synthetic world

struct WorldConfig {
    std::size_t topics = 6;
    std::size_t pins_per_topic = 50;
    std::size_t boards_per_topic = 30;
    std::size_t pins_per_board = 10;
    double off_topic_rate = 0.1;  // chance a board slot draws from any topic
    std::vector<std::string> locales = {"en", "fr"};
    std::vector<double> locale_weights = {0.85, 0.15};
    double second_locale_rate = 0.25;  // chance an image also has an instance in another locale
    std::size_t annotation_dim = 8;
    std::size_t visual_dim = 8;
    std::size_t users = 4000;
    std::uint64_t seed = 0;
};

/// Hidden per-pin truth the user model reads and features never see directly.
struct PinTruth {
    std::size_t topic = 0;
    double quality = 0.0;  // in (0, 1]
};

struct SyntheticWorld {
    WorldConfig config;
    PinCorpus pins;
    BoardCorpus boards;
    std::map<std::string, UserContext> users;
    std::vector<std::string> user_ids;
    std::vector<std::string> queries;  // pins on at least one board
    std::unordered_map<std::string, PinTruth> truth;
};

/// Topical pins with planted clusters in every embedding, popularity that
/// grows with hidden quality, locale-skewed boards and users.
SyntheticWorld make_world(const WorldConfig& cfg);

// ---------------------------------------------------------------------------
// user model

struct UserModelConfig {
    /// Examination probability by platform and rank; ranks past the end use
    /// the last value. Each curve must be non-increasing and in [0, 1].
    std::map<std::string, std::vector<double>> examination;
    double closeup = 0.9;     // P(closeup | examined) = closeup * r
    double click = 0.5;       // P(click | closeup) = click * r
    double long_click = 0.4;  // P(long_click | click)
    double save = 0.6;        // P(save | closeup) = save * r
    double nonlocal_factor = 0.4;  // relevance multiplier when no instance is in the user's language
    double cross_topic_affinity = 0.15;
    std::uint64_t seed = 0;

    /// Geometric curves for web, ios and android over 30 ranks.
    static UserModelConfig defaults();
};

/// Examination-hypothesis user: a result is examined with a probability
/// that depends only on (platform, rank); examined results are engaged with
/// probabilities that grow with latent relevance.
class SyntheticUserModel {
  public:
    SyntheticUserModel(const SyntheticWorld& world, UserModelConfig cfg);

    const UserModelConfig& config() const { return cfg_; }
    std::vector<std::string> platforms() const;
    double examination(std::string_view platform, int rank) const;
    /// Latent relevance in [0, 1]; 0 for pins outside the world.
    double relevance(const UserContext& user, std::string_view query, std::string_view candidate) const;
    /// Marginal probability of each Memboost action given examination.
    std::array<double, kNumMbActions> action_probabilities(double relevance) const;

  private:
    const SyntheticWorld* world_;
    UserModelConfig cfg_;
};

// ---------------------------------------------------------------------------
// sessions and policies

struct SimRequest {
    std::string session_id;
    std::string user_id;
    std::string query;
    std::string platform;
    std::int64_t timestamp = 0;
    std::uint64_t seed = 0;
};

struct ServedItem {
    std::string signature;
    Source source = Source::board_cooc;
    double generator_score = 0.0;
};

struct ServedList {
    std::vector<ServedItem> items;
    std::string tag;
};

using Policy = std::function<ServedList(const SimRequest&, const UserContext&)>;
using CandidateFn = std::function<CandidateSet(std::string_view query, const UserContext& user)>;

/// Users uniformly, queries weighted by popularity + 1, platforms uniformly.
std::vector<SimRequest> make_traffic(const SyntheticWorld& world, const SyntheticUserModel& users, std::size_t sessions,
                                     std::uint64_t seed, std::string_view id_prefix, std::int64_t start_timestamp);

/// Impressions for every served item plus the actions the user takes.
/// Deterministic per request seed.
std::vector<EngagementEvent> simulate_session(const SyntheticUserModel& users, const UserContext& user,
                                              const SimRequest& request, const ServedList& served);

/// Serves and simulates every request; events come back in request order
/// whatever the parallelism.
std::vector<EngagementEvent> simulate(const Policy& policy, std::span<const SimRequest> requests,
                                      const SyntheticWorld& world, const SyntheticUserModel& users,
                                      unsigned parallelism = 1);

/// Board co-occurrence candidates on the world's graph, precomputed per
/// query with a per-query seed.
CandidateFn cooccurrence_candidates(const SyntheticWorld& world, std::size_t budget, std::uint64_t seed);

/// Candidates in generator-score order.
Policy generator_policy(CandidateFn candidates, std::size_t list_length);
/// A seeded random sample of the candidates in random order, tagged "unbiased".
Policy randomized_policy(CandidateFn candidates, std::size_t list_length);
struct MemboostUse {
    std::shared_ptr<const MemboostStore> store;
    MemboostParams params;
    bool features = false;  // the model was trained with Memboost features from this store
    bool boost = false;     // add gamma * MB to scores before truncation
};

/// Candidates ranked by the model.
Policy model_policy(RankingModel model, const PinCorpus& pins, CandidateFn candidates, std::size_t list_length,
                    MemboostUse memboost = {});

/// True for the fraction of (user, query) pairs that get unranked results.
bool unbiased_gate(std::string_view user, std::string_view query, double fraction, std::uint64_t salt);
Policy gated_policy(Policy ranked, Policy randomized, double fraction, std::uint64_t salt);

// ---------------------------------------------------------------------------
// save propensity and experiments

struct ArmStats {
    std::size_t users_seen = 0;
    std::size_t users_saved = 0;
    double propensity = 0.0;
};

/// Users who saved a result divided by users who saw one. Sessions tagged
/// `exclude_tag` are ignored.
ArmStats save_propensity(std::span<const EngagementEvent> events, std::string_view exclude_tag = {});

struct AbConfig {
    std::size_t sessions = 10000;
    double treatment_share = 0.5;  // users split by a salted hash
    std::size_t bootstrap = 1000;
    std::uint64_t seed = 0;
    unsigned parallelism = 1;
    std::int64_t start_timestamp = 0;
};

struct AbResult {
    ArmStats control;
    ArmStats treatment;
    double difference = 0.0;  // treatment - control
    double ci_low = 0.0;      // 95% percentile bootstrap over users
    double ci_high = 0.0;
    std::vector<EngagementEvent> events;  // tagged "control" / "treatment"
};

AbResult run_ab(const Policy& control, const Policy& treatment, const SyntheticWorld& world,
                const SyntheticUserModel& users, const AbConfig& cfg);

// ---------------------------------------------------------------------------
// feedback loop

struct LoopConfig {
    std::size_t generations = 4;
    std::size_t sessions_per_generation = 4000;
    double unbiased_fraction = 0.2;
    bool train_on_unbiased_only = true;
    std::size_t candidate_budget = 30;
    std::size_t list_length = 10;
    HyperParams training;
    // A store built from all earlier generations can feed the features and
    // adjust scores before truncation.
    bool memboost_features = false;
    bool memboost_boost = false;
    MemboostParams memboost_params;
    std::uint64_t seed = 0;
    unsigned parallelism = 1;
    WorldConfig world;
    UserModelConfig user_model = UserModelConfig::defaults();
};

LoopConfig parse_loop_config(std::string_view json_text);

struct GenerationReport {
    std::size_t generation = 0;
    std::string regime;
    double save_propensity = 0.0;  // over the sessions the gate leaves ranked
    double mean_rank_shown = 0.0;  // of the training rows drawn from this generation's logs
    std::size_t training_rows = 0;
    std::size_t sessions = 0;
};

enum class LoopRegime { biased, unbiased };

std::string_view to_string(LoopRegime r);

/// Generation 0 serves generator order; generation g + 1 serves a model
/// trained on generation g's logs. Every generation replays the same
/// requests. The unbiased regime serves the gated fraction of sessions
/// unranked (and with train_on_unbiased_only trains on those alone); the
/// biased regime ranks every session and trains on all of them. Save
/// propensity is measured on the sessions the gate leaves ranked, which are
/// the same in both regimes.
std::vector<GenerationReport> run_feedback_loop(const LoopConfig& cfg, const SyntheticWorld& world,
                                                const SyntheticUserModel& users, const CandidateFn& candidates,
                                                LoopRegime regime);

/// Both regimes on the same world and traffic.
std::vector<GenerationReport> compare_loop_regimes(const LoopConfig& cfg);

/// generation,regime,save_propensity,mean_rank_shown
std::string generations_csv(std::span<const GenerationReport> rows);

}  // namespace relrec
