#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace relrec {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Engagement actions, declared in ascending order of strength so that
/// `std::max` over actions yields the best action of a result.
enum class Action : std::uint8_t { impression = 0, closeup = 1, click = 2, long_click = 3, save = 4 };

inline constexpr int kNumActions = 5;

std::string_view to_string(Action a);
Action parse_action(std::string_view s);

/// NDCG grade of an action: impression=0 ... save=4.
inline int action_grade(Action a) { return static_cast<int>(a); }

/// Candidate sources, declared in dedup priority order (highest first).
enum class Source : std::uint8_t { board_cooc = 0, walk, pin2vec, search, visual, segmented };

inline constexpr int kNumSources = 6;

std::string_view to_string(Source s);
Source parse_source(std::string_view s);

enum class CandidateStatus : std::uint8_t {
    ok,
    unknown_query,
    out_of_vocab,
    degenerate_query,
    near_duplicate,
};

std::string_view to_string(CandidateStatus s);

struct CandidateEntry {
    std::string signature;
    Source source = Source::board_cooc;
    double generator_score = 0.0;

    bool operator==(const CandidateEntry&) const = default;
};

struct CandidateSet {
    std::string query_signature;
    std::vector<CandidateEntry> entries;
    CandidateStatus status = CandidateStatus::ok;

    bool operator==(const CandidateSet&) const = default;
    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

/// Sort by generator_score descending, ties by signature ascending.
void sort_by_score(std::vector<CandidateEntry>& entries);

/// A candidate after ranking.
struct ScoredResult {
    std::string signature;
    Source source = Source::board_cooc;
    double generator_score = 0.0;
    double score = 0.0;
    bool memboost_inserted = false;

    bool operator==(const ScoredResult&) const = default;
};

/// Sort by score descending, ties by signature ascending.
void sort_by_score(std::vector<ScoredResult>& results);

// ---------------------------------------------------------------------------
// vector math

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
/// Cosine similarity; 0 when either vector is all-zero or the sizes differ.
double cosine(std::span<const double> a, std::span<const double> b);
/// Jaccard similarity of two token collections treated as sets; 0 when both are empty.
double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// hashing and randomness

/// FNV-1a followed by a splitmix finalizer. Stable across runs and platforms.
std::uint64_t stable_hash64(std::string_view s);
std::uint64_t mix64(std::uint64_t x);
/// Derive an independent seed for a sub-stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return mix64(seed ^ mix64(stream + 0x9e3779b97f4a7c15ULL));
}
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    return derive_seed(seed, stable_hash64(stream));
}

/// Map a 64-bit value to [0, 1).
inline double unit_interval(std::uint64_t h) {
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    double uniform() { return unit_interval(engine_()); }
    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);
    bool bernoulli(double p) { return uniform() < p; }
    double normal(double mean = 0.0, double stddev = 1.0);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Seed from the RELREC_SEED environment variable, or `fallback` when unset.
std::uint64_t env_seed(std::uint64_t fallback);

/// Run fn(i) for i in [0, n) over up to `threads` worker threads.
/// fn must not depend on the order of execution.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn);

}  // namespace relrec

#include "relrec/detail/parallel.hpp"
