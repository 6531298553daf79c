#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"

namespace relrec {

struct GraphConfig {
    std::size_t max_board_degree = 1000;
    std::size_t max_pin_degree = 1000;
    std::uint64_t seed = 0;
    // Drops pins whose heuristic relevance to their board's profile falls
    // below the threshold. Off by default.
    bool prune_low_relevance = false;
    double low_relevance_threshold = 0.01;
};

/// Board <-> pin adjacency in compressed form. Each edge is one pin
/// instance on one board. Immutable once built.
class BipartiteGraph {
  public:
    std::size_t num_pins() const { return pin_sigs_.size(); }
    std::size_t num_boards() const { return board_ids_.size(); }
    std::size_t num_edges() const { return pin_edges_.size(); }

    const std::string& pin_signature(std::size_t pin) const { return pin_sigs_[pin]; }
    const std::string& board_id(std::size_t board) const { return board_ids_[board]; }
    std::optional<std::uint32_t> pin_index(std::string_view signature) const;
    std::optional<std::uint32_t> board_index(std::string_view board_id) const;

    std::span<const std::uint32_t> boards_of(std::size_t pin) const {
        return {pin_edges_.data() + pin_offsets_[pin], pin_edges_.data() + pin_offsets_[pin + 1]};
    }
    std::span<const std::uint32_t> pins_of(std::size_t board) const {
        return {board_edges_.data() + board_offsets_[board], board_edges_.data() + board_offsets_[board + 1]};
    }

    std::size_t max_pin_degree() const;
    std::size_t max_board_degree() const;

    /// Builds from an explicit board -> pin signature listing (already pruned).
    static BipartiteGraph from_adjacency(const std::vector<std::string>& board_ids,
                                         const std::vector<std::vector<std::string>>& board_pins);

  private:
    std::vector<std::string> pin_sigs_;
    std::vector<std::string> board_ids_;
    std::unordered_map<std::string, std::uint32_t> pin_lookup_;
    std::unordered_map<std::string, std::uint32_t> board_lookup_;
    std::vector<std::size_t> pin_offsets_{0};
    std::vector<std::uint32_t> pin_edges_;
    std::vector<std::size_t> board_offsets_{0};
    std::vector<std::uint32_t> board_edges_;
};

/// Builds the pruned graph. Boards above max_board_degree and pins above
/// max_pin_degree keep a seeded uniform subsample of their edges; nodes
/// left without edges are removed. Throws Error on an empty corpus.
BipartiteGraph build_graph(const BoardCorpus& boards, const PinCorpus& pins, const GraphConfig& cfg = {});

/// 0.5 * Jaccard(annotations) + 0.5 * cosine(category vectors), in [0, 1].
double heuristic_relevance(const PinRecord& query, const PinRecord& cand);

/// Samples up to `sample_budget` pins sharing a board with the query, without
/// replacement and proportionally to the number of shared boards. Scores are
/// heuristic_relevance. Unknown queries give an empty set flagged unknown_query.
CandidateSet board_cooccurrence(const BipartiteGraph& graph, const PinCorpus& pins, std::string_view query,
                                std::size_t sample_budget, std::uint64_t seed);

/// Co-occurrence sampling over `graph` given the boards the query sits on.
/// `query_boards` index into `graph`. Shared by the segmented source.
CandidateSet sample_cooccurring(const BipartiteGraph& graph, std::span<const std::uint32_t> query_boards,
                                const PinRecord& query, const PinCorpus& pins, std::size_t sample_budget,
                                std::uint64_t seed, Source source);

struct WalkConfig {
    std::uint64_t total_steps = 100'000;
    double reset_probability = 0.5;
    std::uint64_t seed = 0;
    std::size_t max_results = 1000;
};

void validate(const WalkConfig& cfg);

/// Raw visit counts per pin index from one walk with restarts.
std::vector<std::uint64_t> walk_visit_counts(const BipartiteGraph& graph, std::uint32_t query,
                                             const WalkConfig& cfg);

/// Random walk with restart from the query; score = visits / total_steps.
CandidateSet random_walk(const BipartiteGraph& graph, std::string_view query, const WalkConfig& cfg);

/// Visit distribution of the walk computed by power iteration of the
/// pin -> board -> pin transition with restart at the query.
std::vector<double> exact_ppr(const BipartiteGraph& graph, std::string_view query, double reset_probability,
                              double tolerance = 1e-12);

}  // namespace relrec
