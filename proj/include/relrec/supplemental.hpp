#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"
#include "relrec/graph.hpp"

namespace relrec {

// ---------------------------------------------------------------------------
// text search

struct Posting {
    std::uint32_t pin;  // index into the corpus records
    std::uint32_t tf;
};

/// Inverted index over annotation tokens. Posting lists are ordered by pin
/// popularity (then signature) so that a capped list keeps the head pins.
class AnnotationIndex {
  public:
    /// max_postings > 0 caps every posting list, which bounds the cost of
    /// very frequent tokens at the price of exactness for them.
    explicit AnnotationIndex(const PinCorpus& pins, std::size_t max_postings = 0);

    double idf(std::string_view token) const;
    std::size_t document_frequency(std::string_view token) const;
    const std::vector<Posting>& postings(std::string_view token) const;
    const PinCorpus& corpus() const { return *pins_; }

  private:
    struct Entry {
        std::size_t df = 0;
        std::vector<Posting> postings;
    };
    const PinCorpus* pins_;
    std::unordered_map<std::string, Entry> tokens_;
};

/// Score = sum of idf over distinct tokens shared with the query.
CandidateSet search_candidates(const AnnotationIndex& index, const PinRecord& query, std::size_t k);

// ---------------------------------------------------------------------------
// visual similarity

/// Produces the related results of a near-duplicate pin.
using RelatedLookup = std::function<CandidateSet(const PinRecord& duplicate)>;

/// Exact top-k by visual cosine. When some other pin is a near-duplicate of
/// the query (cosine >= dup_threshold), the nearest such pin's related
/// results are returned instead, flagged near_duplicate. An all-zero query
/// embedding gives an empty set flagged degenerate_query.
CandidateSet visual_candidates(const PinCorpus& pins, const PinRecord& query, std::size_t k,
                               double dup_threshold = 0.99, const RelatedLookup& related = {});

// ---------------------------------------------------------------------------
// locale segmentation

inline constexpr std::string_view kAnyLocale = "*";

/// One pruned graph per locale, built from boards restricted to pins that
/// have an instance in that locale. Locale "*" is the full graph.
class SegmentedGraphs {
  public:
    SegmentedGraphs(const BoardCorpus& boards, const PinCorpus& pins, const GraphConfig& cfg = {});

    const BipartiteGraph& full() const { return *full_; }
    /// nullptr when the locale has no pins on any board.
    const BipartiteGraph* graph_for(std::string_view locale) const;
    std::vector<std::string> locales() const;

  private:
    std::shared_ptr<const BipartiteGraph> full_;
    std::map<std::string, std::shared_ptr<const BipartiteGraph>, std::less<>> by_locale_;
};

/// Board co-occurrence on the locale graph, seeded by the boards the query
/// sits on in the full graph.
CandidateSet segmented_candidates(const SegmentedGraphs& graphs, const PinCorpus& pins, std::string_view locale,
                                  std::string_view query, std::size_t budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// localization of served results

struct ServedResult {
    std::string signature;
    std::string pin_id;
    std::string locale;
    double score = 0.0;
    Source source = Source::board_cooc;

    bool operator==(const ServedResult&) const = default;
};

/// Picks the record's default instance: one in the record's own locale,
/// otherwise the first.
ServedResult to_served(const CandidateEntry& entry, double score, const PinCorpus& pins);

/// Replaces non-local results by a local instance of the same image when
/// one exists. Order, scores and signatures are unchanged.
std::vector<ServedResult> local_swap(std::vector<ServedResult> results, std::string_view viewer_locale,
                                     const PinCorpus& pins);

/// Moves every local result up by at most boost_positions, keeping the
/// relative order of local results and of non-local results.
std::vector<ServedResult> local_boost(std::vector<ServedResult> results, std::string_view viewer_locale,
                                      std::size_t boost_positions);

// ---------------------------------------------------------------------------
// blending

struct BlendPolicy {
    std::array<double, kNumSources> ratios{};
    /// Share of the budget reserved for segmented candidates per viewer
    /// locale; other ratios are scaled to fill the rest.
    std::map<std::string, double, std::less<>> segmented_ratio;

    static BlendPolicy single(Source s);
    static BlendPolicy uniform(std::span<const Source> sources);
    /// Effective ratios for a viewer locale, summing to 1.
    std::array<double, kNumSources> ratios_for(std::string_view locale) const;
    void validate() const;
};

/// {"ratios": {"walk": 0.5, ...}, "segmented_by_locale": {"fr": 0.3}}
BlendPolicy parse_blend_policy(std::string_view json_text);
BlendPolicy load_blend_policy(const std::filesystem::path& path);

/// Deduplicates by signature keeping the highest-priority source, then
/// interleaves sources so that each prefix follows the ratios as closely as
/// possible. Ties between equally short-changed sources are broken by a
/// seeded permutation. Never returns the query or more than `budget` entries.
CandidateSet blend(const std::vector<CandidateSet>& sets, const BlendPolicy& policy, std::size_t budget,
                   std::uint64_t seed, std::string_view viewer_locale = {});

}  // namespace relrec
