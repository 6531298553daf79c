#include "relrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace relrec {

namespace {

/// Keeps `keep` of `n` positions chosen uniformly, returned in ascending order.
std::vector<std::size_t> subsample_positions(std::size_t n, std::size_t keep, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < keep; ++i) {
        std::size_t j = i + rng.below(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
}

PinRecord board_profile(const Board& board, const PinCorpus& pins, std::size_t cat_dim) {
    PinRecord profile;
    profile.annotations = board.title_tokens;
    profile.category_vector.assign(cat_dim, 0.0);
    for (const auto& sig : board.pin_signatures) {
        const auto& cv = pins.at(sig).category_vector;
        for (std::size_t i = 0; i < cat_dim && i < cv.size(); ++i) profile.category_vector[i] += cv[i];
    }
    return profile;
}

}  // namespace

std::optional<std::uint32_t> BipartiteGraph::pin_index(std::string_view signature) const {
    auto it = pin_lookup_.find(std::string(signature));
    if (it == pin_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::uint32_t> BipartiteGraph::board_index(std::string_view id) const {
    auto it = board_lookup_.find(std::string(id));
    if (it == board_lookup_.end()) return std::nullopt;
    return it->second;
}

std::size_t BipartiteGraph::max_pin_degree() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < num_pins(); ++i) m = std::max(m, boards_of(i).size());
    return m;
}

std::size_t BipartiteGraph::max_board_degree() const {
    std::size_t m = 0;
    for (std::size_t i = 0; i < num_boards(); ++i) m = std::max(m, pins_of(i).size());
    return m;
}

BipartiteGraph BipartiteGraph::from_adjacency(const std::vector<std::string>& board_ids,
                                              const std::vector<std::vector<std::string>>& board_pins) {
    BipartiteGraph g;
    std::vector<std::vector<std::uint32_t>> pin_boards;
    std::vector<std::vector<std::uint32_t>> board_members;
    for (std::size_t b = 0; b < board_ids.size(); ++b) {
        if (board_pins[b].empty()) continue;
        auto bi = static_cast<std::uint32_t>(g.board_ids_.size());
        g.board_ids_.push_back(board_ids[b]);
        g.board_lookup_.emplace(board_ids[b], bi);
        board_members.emplace_back();
        for (const auto& sig : board_pins[b]) {
            auto [it, inserted] = g.pin_lookup_.emplace(sig, static_cast<std::uint32_t>(g.pin_sigs_.size()));
            if (inserted) {
                g.pin_sigs_.push_back(sig);
                pin_boards.emplace_back();
            }
            pin_boards[it->second].push_back(bi);
            board_members.back().push_back(it->second);
        }
    }
    for (const auto& bs : pin_boards) {
        g.pin_edges_.insert(g.pin_edges_.end(), bs.begin(), bs.end());
        g.pin_offsets_.push_back(g.pin_edges_.size());
    }
    for (const auto& ps : board_members) {
        g.board_edges_.insert(g.board_edges_.end(), ps.begin(), ps.end());
        g.board_offsets_.push_back(g.board_edges_.size());
    }
    return g;
}

BipartiteGraph build_graph(const BoardCorpus& boards, const PinCorpus& pins, const GraphConfig& cfg) {
    if (boards.size() == 0 || pins.empty()) throw Error("build_graph: empty corpus");
    if (cfg.max_board_degree == 0 || cfg.max_pin_degree == 0)
        throw std::invalid_argument("build_graph: degree limits must be positive");

    std::vector<std::string> ids;
    std::vector<std::vector<std::string>> members;
    ids.reserve(boards.size());
    members.reserve(boards.size());
    for (const auto& b : boards.boards()) {
        std::vector<std::string> kept;
        if (cfg.prune_low_relevance) {
            PinRecord profile = board_profile(b, pins, pins.dimensions().category);
            for (const auto& sig : b.pin_signatures) {
                if (heuristic_relevance(pins.at(sig), profile) >= cfg.low_relevance_threshold) kept.push_back(sig);
            }
        } else {
            kept = b.pin_signatures;
        }
        if (kept.size() > cfg.max_board_degree) {
            Rng rng(derive_seed(cfg.seed, "board:" + b.board_id));
            std::vector<std::string> sub;
            for (auto i : subsample_positions(kept.size(), cfg.max_board_degree, rng)) sub.push_back(kept[i]);
            kept = std::move(sub);
        }
        ids.push_back(b.board_id);
        members.push_back(std::move(kept));
    }

    // pin-side pruning over the board-pruned edges
    std::unordered_map<std::string, std::vector<std::size_t>> boards_of_pin;
    std::vector<std::string> pin_order;
    for (std::size_t b = 0; b < members.size(); ++b) {
        for (const auto& sig : members[b]) {
            auto [it, inserted] = boards_of_pin.try_emplace(sig);
            if (inserted) pin_order.push_back(sig);
            it->second.push_back(b);
        }
    }
    std::vector<std::vector<bool>> keep_edge(members.size());
    for (std::size_t b = 0; b < members.size(); ++b) keep_edge[b].assign(members[b].size(), true);
    std::vector<std::unordered_map<std::string, std::size_t>> position(members.size());
    for (std::size_t b = 0; b < members.size(); ++b) {
        for (std::size_t i = 0; i < members[b].size(); ++i) position[b].emplace(members[b][i], i);
    }
    for (const auto& sig : pin_order) {
        const auto& bl = boards_of_pin[sig];
        if (bl.size() <= cfg.max_pin_degree) continue;
        Rng rng(derive_seed(cfg.seed, "pin:" + sig));
        auto keep = subsample_positions(bl.size(), cfg.max_pin_degree, rng);
        std::vector<bool> kept(bl.size(), false);
        for (auto k : keep) kept[k] = true;
        for (std::size_t i = 0; i < bl.size(); ++i) {
            if (!kept[i]) keep_edge[bl[i]][position[bl[i]].at(sig)] = false;
        }
    }
    for (std::size_t b = 0; b < members.size(); ++b) {
        std::vector<std::string> sub;
        for (std::size_t i = 0; i < members[b].size(); ++i) {
            if (keep_edge[b][i]) sub.push_back(std::move(members[b][i]));
        }
        members[b] = std::move(sub);
    }
    return BipartiteGraph::from_adjacency(ids, members);
}

double heuristic_relevance(const PinRecord& query, const PinRecord& cand) {
    double j = jaccard(query.annotations, cand.annotations);
    double c = std::max(0.0, cosine(query.category_vector, cand.category_vector));
    return std::clamp(0.5 * j + 0.5 * c, 0.0, 1.0);
}

CandidateSet sample_cooccurring(const BipartiteGraph& graph, std::span<const std::uint32_t> query_boards,
                                const PinRecord& query, const PinCorpus& pins, std::size_t sample_budget,
                                std::uint64_t seed, Source source) {
    CandidateSet out;
    out.query_signature = query.image_signature;

    std::unordered_map<std::uint32_t, std::uint32_t> cooc;
    for (auto b : query_boards) {
        for (auto p : graph.pins_of(b)) {
            if (graph.pin_signature(p) != query.image_signature) ++cooc[p];
        }
    }
    std::vector<std::pair<std::uint32_t, std::uint32_t>> counts(cooc.begin(), cooc.end());
    std::sort(counts.begin(), counts.end());

    // Weighted sampling without replacement (Efraimidis-Spirakis keys):
    // the largest log(u)/w keys are a successive weighted draw.
    Rng rng(seed);
    std::vector<std::pair<double, std::uint32_t>> keys;
    keys.reserve(counts.size());
    for (auto [pin, count] : counts) {
        double u;
        do {
            u = rng.uniform();
        } while (u <= 0.0);
        keys.emplace_back(std::log(u) / static_cast<double>(count), pin);
    }
    std::size_t take = std::min(sample_budget, keys.size());
    std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    for (std::size_t i = 0; i < take; ++i) {
        const auto& sig = graph.pin_signature(keys[i].second);
        const PinRecord* cand = pins.find(sig);
        double score = cand != nullptr ? heuristic_relevance(query, *cand) : 0.0;
        out.entries.push_back({sig, source, score});
    }
    sort_by_score(out.entries);
    return out;
}

CandidateSet board_cooccurrence(const BipartiteGraph& graph, const PinCorpus& pins, std::string_view query,
                                std::size_t sample_budget, std::uint64_t seed) {
    auto q = graph.pin_index(query);
    const PinRecord* rec = pins.find(query);
    if (!q || rec == nullptr) {
        CandidateSet out;
        out.query_signature = std::string(query);
        out.status = CandidateStatus::unknown_query;
        return out;
    }
    return sample_cooccurring(graph, graph.boards_of(*q), *rec, pins, sample_budget, seed, Source::board_cooc);
}

void validate(const WalkConfig& cfg) {
    if (cfg.total_steps == 0) throw std::invalid_argument("walk: total_steps must be positive");
    if (!(cfg.reset_probability > 0.0 && cfg.reset_probability < 1.0))
        throw std::invalid_argument("walk: reset_probability must lie in (0, 1)");
    if (cfg.max_results == 0) throw std::invalid_argument("walk: max_results must be positive");
}

std::vector<std::uint64_t> walk_visit_counts(const BipartiteGraph& graph, std::uint32_t query,
                                             const WalkConfig& cfg) {
    validate(cfg);
    std::vector<std::uint64_t> visits(graph.num_pins(), 0);
    Rng rng(cfg.seed);
    std::uint32_t current = query;
    for (std::uint64_t step = 0; step < cfg.total_steps; ++step) {
        auto boards = graph.boards_of(current);
        auto board = boards[rng.below(boards.size())];
        auto members = graph.pins_of(board);
        std::uint32_t next = members[rng.below(members.size())];
        ++visits[next];
        current = rng.bernoulli(cfg.reset_probability) ? query : next;
    }
    return visits;
}

CandidateSet random_walk(const BipartiteGraph& graph, std::string_view query, const WalkConfig& cfg) {
    validate(cfg);
    CandidateSet out;
    out.query_signature = std::string(query);
    auto q = graph.pin_index(query);
    if (!q) {
        out.status = CandidateStatus::unknown_query;
        return out;
    }
    auto visits = walk_visit_counts(graph, *q, cfg);
    std::vector<std::uint32_t> order;
    for (std::uint32_t p = 0; p < visits.size(); ++p) {
        if (p != *q && visits[p] > 0) order.push_back(p);
    }
    std::size_t take = std::min(cfg.max_results, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                      [&](std::uint32_t a, std::uint32_t b) {
                          if (visits[a] != visits[b]) return visits[a] > visits[b];
                          return graph.pin_signature(a) < graph.pin_signature(b);
                      });
    const double total = static_cast<double>(cfg.total_steps);
    for (std::size_t i = 0; i < take; ++i) {
        out.entries.push_back({graph.pin_signature(order[i]), Source::walk,
                               static_cast<double>(visits[order[i]]) / total});
    }
    return out;
}

std::vector<double> exact_ppr(const BipartiteGraph& graph, std::string_view query, double reset_probability,
                              double tolerance) {
    auto q = graph.pin_index(query);
    if (!q) throw Error("exact_ppr: query not in graph: " + std::string(query));
    if (!(reset_probability > 0.0 && reset_probability < 1.0))
        throw std::invalid_argument("exact_ppr: reset_probability must lie in (0, 1)");
    const std::size_t n = graph.num_pins();
    std::vector<double> visit(n, 0.0);
    std::vector<double> next(n, 0.0);
    std::vector<double> start(n, 0.0);
    // visit' = (r * e_q + (1 - r) * visit) P
    for (int iter = 0; iter < 100000; ++iter) {
        for (std::size_t i = 0; i < n; ++i) start[i] = (1.0 - reset_probability) * visit[i];
        start[*q] += reset_probability;
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            if (start[i] == 0.0) continue;
            auto boards = graph.boards_of(i);
            double per_board = start[i] / static_cast<double>(boards.size());
            for (auto b : boards) {
                auto members = graph.pins_of(b);
                double share = per_board / static_cast<double>(members.size());
                for (auto p : members) next[p] += share;
            }
        }
        double change = 0.0;
        for (std::size_t i = 0; i < n; ++i) change += std::abs(next[i] - visit[i]);
        visit.swap(next);
        if (change < tolerance) break;
    }
    return visit;
}

}  // namespace relrec
