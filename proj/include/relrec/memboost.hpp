#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"

namespace relrec {

/// Engaged actions tracked by Memboost, in the order of the beta weights.
enum class MbAction : std::uint8_t { click = 0, long_click, closeup, save };

inline constexpr int kNumMbActions = 4;

std::optional<MbAction> to_mb_action(Action a);
std::string_view to_string(MbAction a);

/// Global engagement rate per action, platform and rank.
class PositionPriors {
  public:
    struct Table {
        std::vector<std::array<double, kNumMbActions>> rates;  // by rank
        std::vector<std::uint64_t> impressions;                 // by rank, as observed
    };

    /// Rate for the action at (platform, rank). Ranks past the last observed
    /// rank clamp to it; unknown platforms use the rates pooled over all
    /// platforms.
    double rate(MbAction a, std::string_view platform, int rank) const;
    /// Highest rank with impressions on the platform, or -1.
    int max_rank(std::string_view platform) const;
    std::vector<std::string> platforms() const;
    const Table* table(std::string_view platform) const;
    const Table& pooled() const { return pooled_; }

    bool operator==(const PositionPriors&) const;

  private:
    friend PositionPriors compute_priors(const EngagementLog& log);
    friend PositionPriors priors_from_json(std::string_view text);
    std::map<std::string, Table, std::less<>> by_platform_;
    Table pooled_;
};

/// rate = events / impressions at each (platform, rank). Ranks without
/// impressions between observed ranks are linearly interpolated; ranks
/// before the first observed rank take its rate.
PositionPriors compute_priors(const EngagementLog& log);

std::string priors_to_json(const PositionPriors& priors);
PositionPriors priors_from_json(std::string_view text);

struct MemboostStats {
    std::array<double, kNumMbActions> counts{};
    std::array<double, kNumMbActions> expected{};
    std::uint64_t impressions = 0;

    bool operator==(const MemboostStats&) const = default;
};

/// Per-(query, result) statistics in a flat table sorted by key.
class MemboostStore {
  public:
    struct Record {
        std::string query;
        std::string result;
        MemboostStats stats;

        bool operator==(const Record&) const = default;
    };

    MemboostStore() = default;
    /// Records must be unique per key; they are sorted here.
    explicit MemboostStore(std::vector<Record> records);

    const MemboostStats* find(std::string_view query, std::string_view result) const;
    /// All records of one query, sorted by result.
    std::span<const Record> for_query(std::string_view query) const;
    const std::vector<Record>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

    bool operator==(const MemboostStore&) const = default;

  private:
    std::vector<Record> records_;
};

/// Impressions add their prior rates into expected counts; actions
/// increment counts. Pairs without impressions never appear.
MemboostStore accumulate(const EngagementLog& log, const PositionPriors& priors);
/// Same over a raw event list, which must already satisfy the log's
/// validity rules.
MemboostStore accumulate(std::span<const EngagementEvent> events, const PositionPriors& priors);

/// Stores over disjoint event sets combine by summing counts.
MemboostStore merge(const MemboostStore& a, const MemboostStore& b);

void save_store(const MemboostStore& store, const std::filesystem::path& path);
MemboostStore load_store(const std::filesystem::path& path);

struct MemboostParams {
    std::array<double, kNumMbActions> beta = {1.0, 2.0, 0.5, 5.0};  // click, long_click, closeup, save
    double alpha = 1.0;
    double gamma = 1.0;
    std::size_t insert_count = 3;  // n
};

/// log((sum beta*counts + alpha) / (sum beta*expected + alpha)). Throws
/// std::invalid_argument when alpha <= 0.
double mb_score(const MemboostStats& stats, const MemboostParams& params);

inline double memboosted_score(double base_score, double mb, double gamma) { return base_score + gamma * mb; }

/// Adds gamma * MB to every result's score and re-sorts.
void apply_memboost(std::vector<ScoredResult>& ranked, std::string_view query, const MemboostStore& store,
                    const MemboostParams& params);

/// Inserts up to n results of this query with the highest positive MB that
/// are missing from `ranked` (which must be sorted by score). An inserted
/// result scores min(incoming scores) + gamma * MB and goes in front of the
/// first result with a lower score.
std::vector<ScoredResult> memboost_insert(std::vector<ScoredResult> ranked, const MemboostStore& store,
                                          const MemboostParams& params, std::string_view query);

inline constexpr std::size_t kMemboostFeatureCount = 3 * kNumMbActions;

/// Counts, expected counts and log((count + alpha) / (expected + alpha)) per
/// action. Zeros for unseen pairs.
std::array<double, kMemboostFeatureCount> memboost_features(const MemboostStats* stats, double alpha = 1.0);
std::array<double, kMemboostFeatureCount> memboost_features(const MemboostStore& store, std::string_view query,
                                                             std::string_view result, double alpha = 1.0);
std::vector<std::string> memboost_feature_names();

}  // namespace relrec
