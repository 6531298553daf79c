#include "relrec/supplemental.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace relrec {

using nlohmann::json;

namespace {

const std::vector<Posting> kNoPostings;

void keep_top_k(std::vector<CandidateEntry>& entries, std::size_t k) {
    sort_by_score(entries);
    if (entries.size() > k) entries.resize(k);
}

}  // namespace

// ---------------------------------------------------------------------------
// text search

AnnotationIndex::AnnotationIndex(const PinCorpus& pins, std::size_t max_postings) : pins_(&pins) {
    const auto& recs = pins.records();
    for (std::uint32_t i = 0; i < recs.size(); ++i) {
        const auto& tokens = recs[i].annotations;  // sorted, so equal tokens are adjacent
        for (std::size_t j = 0; j < tokens.size();) {
            std::size_t end = j;
            while (end < tokens.size() && tokens[end] == tokens[j]) ++end;
            auto& entry = tokens_[tokens[j]];
            entry.df += 1;
            entry.postings.push_back({i, static_cast<std::uint32_t>(end - j)});
            j = end;
        }
    }
    for (auto& [token, entry] : tokens_) {
        std::sort(entry.postings.begin(), entry.postings.end(), [&](const Posting& a, const Posting& b) {
            if (recs[a.pin].popularity != recs[b.pin].popularity) return recs[a.pin].popularity > recs[b.pin].popularity;
            return recs[a.pin].image_signature < recs[b.pin].image_signature;
        });
        if (max_postings > 0 && entry.postings.size() > max_postings) entry.postings.resize(max_postings);
    }
}

std::size_t AnnotationIndex::document_frequency(std::string_view token) const {
    auto it = tokens_.find(std::string(token));
    return it == tokens_.end() ? 0 : it->second.df;
}

double AnnotationIndex::idf(std::string_view token) const {
    auto df = document_frequency(token);
    if (df == 0) return 0.0;
    return std::log(1.0 + static_cast<double>(pins_->size()) / static_cast<double>(df));
}

const std::vector<Posting>& AnnotationIndex::postings(std::string_view token) const {
    auto it = tokens_.find(std::string(token));
    return it == tokens_.end() ? kNoPostings : it->second.postings;
}

CandidateSet search_candidates(const AnnotationIndex& index, const PinRecord& query, std::size_t k) {
    CandidateSet out;
    out.query_signature = query.image_signature;
    std::set<std::string> tokens(query.annotations.begin(), query.annotations.end());
    std::unordered_map<std::uint32_t, double> scores;
    for (const auto& t : tokens) {
        double w = index.idf(t);
        for (const auto& p : index.postings(t)) scores[p.pin] += w;
    }
    const auto& recs = index.corpus().records();
    for (const auto& [pin, score] : scores) {
        if (recs[pin].image_signature == query.image_signature) continue;
        out.entries.push_back({recs[pin].image_signature, Source::search, score});
    }
    keep_top_k(out.entries, k);
    return out;
}

// ---------------------------------------------------------------------------
// visual similarity

CandidateSet visual_candidates(const PinCorpus& pins, const PinRecord& query, std::size_t k, double dup_threshold,
                               const RelatedLookup& related) {
    CandidateSet out;
    out.query_signature = query.image_signature;
    if (l2_norm(query.visual_embedding) == 0.0) {
        out.status = CandidateStatus::degenerate_query;
        return out;
    }
    const PinRecord* duplicate = nullptr;
    double best = -2.0;
    for (const auto& rec : pins.records()) {
        if (rec.image_signature == query.image_signature) continue;
        double c = cosine(query.visual_embedding, rec.visual_embedding);
        out.entries.push_back({rec.image_signature, Source::visual, c});
        if (c >= dup_threshold && c > best) {
            best = c;
            duplicate = &rec;
        }
    }
    if (duplicate != nullptr) {
        out.status = CandidateStatus::near_duplicate;
        if (related) {
            auto delegated = related(*duplicate);
            out.entries.clear();
            for (auto e : delegated.entries) {
                if (e.signature == query.image_signature) continue;
                e.source = Source::visual;
                out.entries.push_back(std::move(e));
            }
        }
    }
    keep_top_k(out.entries, k);
    return out;
}

// ---------------------------------------------------------------------------
// locale segmentation

SegmentedGraphs::SegmentedGraphs(const BoardCorpus& boards, const PinCorpus& pins, const GraphConfig& cfg)
    : full_(std::make_shared<BipartiteGraph>(build_graph(boards, pins, cfg))) {
    std::set<std::string> locales;
    for (const auto& rec : pins.records()) {
        for (const auto& inst : rec.instances) locales.insert(inst.locale);
    }
    for (const auto& locale : locales) {
        std::vector<Board> filtered;
        for (const auto& b : boards.boards()) {
            Board f = b;
            std::erase_if(f.pin_signatures, [&](const std::string& sig) {
                const PinRecord* rec = pins.find(sig);
                return rec == nullptr || rec->instance_in_locale(locale) == nullptr;
            });
            if (!f.pin_signatures.empty()) filtered.push_back(std::move(f));
        }
        if (filtered.empty()) continue;
        auto corpus = BoardCorpus::from_boards(std::move(filtered), pins);
        by_locale_.emplace(locale, std::make_shared<BipartiteGraph>(build_graph(corpus, pins, cfg)));
    }
}

const BipartiteGraph* SegmentedGraphs::graph_for(std::string_view locale) const {
    if (locale == kAnyLocale) return full_.get();
    auto it = by_locale_.find(locale);
    return it == by_locale_.end() ? nullptr : it->second.get();
}

std::vector<std::string> SegmentedGraphs::locales() const {
    std::vector<std::string> out;
    for (const auto& [l, g] : by_locale_) out.push_back(l);
    return out;
}

CandidateSet segmented_candidates(const SegmentedGraphs& graphs, const PinCorpus& pins, std::string_view locale,
                                  std::string_view query, std::size_t budget, std::uint64_t seed) {
    CandidateSet out;
    out.query_signature = std::string(query);
    const PinRecord* rec = pins.find(query);
    auto q = graphs.full().pin_index(query);
    if (rec == nullptr || !q) {
        out.status = CandidateStatus::unknown_query;
        return out;
    }
    const BipartiteGraph* g = graphs.graph_for(locale);
    if (g == nullptr) return out;

    std::vector<std::uint32_t> boards;
    for (auto b : graphs.full().boards_of(*q)) {
        if (auto local = g->board_index(graphs.full().board_id(b))) boards.push_back(*local);
    }
    return sample_cooccurring(*g, boards, *rec, pins, budget, seed, Source::segmented);
}

// ---------------------------------------------------------------------------
// localization

ServedResult to_served(const CandidateEntry& entry, double score, const PinCorpus& pins) {
    ServedResult r;
    r.signature = entry.signature;
    r.score = score;
    r.source = entry.source;
    if (const PinRecord* rec = pins.find(entry.signature); rec != nullptr && !rec->instances.empty()) {
        const PinInstance* inst = rec->instance_in_locale(rec->locale);
        if (inst == nullptr) inst = &rec->instances.front();
        r.pin_id = inst->id;
        r.locale = inst->locale;
    }
    return r;
}

std::vector<ServedResult> local_swap(std::vector<ServedResult> results, std::string_view viewer_locale,
                                     const PinCorpus& pins) {
    for (auto& r : results) {
        if (r.locale == viewer_locale) continue;
        const PinRecord* rec = pins.find(r.signature);
        if (rec == nullptr) continue;
        if (const PinInstance* inst = rec->instance_in_locale(viewer_locale)) {
            r.pin_id = inst->id;
            r.locale = inst->locale;
        }
    }
    return results;
}

std::vector<ServedResult> local_boost(std::vector<ServedResult> results, std::string_view viewer_locale,
                                      std::size_t boost_positions) {
    const std::size_t n = results.size();
    std::vector<std::optional<std::size_t>> slot_owner(n);
    // Local results claim the earliest slot they may reach, in order.
    std::size_t next_free = 0;
    std::vector<bool> placed(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (results[i].locale != viewer_locale) continue;
        std::size_t target = std::max(i >= boost_positions ? i - boost_positions : 0, next_free);
        slot_owner[target] = i;
        placed[i] = true;
        next_free = target + 1;
    }
    std::vector<ServedResult> out(n);
    std::size_t src = 0;
    for (std::size_t slot = 0; slot < n; ++slot) {
        if (slot_owner[slot]) {
            out[slot] = std::move(results[*slot_owner[slot]]);
            continue;
        }
        while (placed[src]) ++src;
        out[slot] = std::move(results[src]);
        placed[src] = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// blending

BlendPolicy BlendPolicy::single(Source s) {
    BlendPolicy p;
    p.ratios[static_cast<int>(s)] = 1.0;
    return p;
}

BlendPolicy BlendPolicy::uniform(std::span<const Source> sources) {
    BlendPolicy p;
    for (auto s : sources) p.ratios[static_cast<int>(s)] = 1.0 / static_cast<double>(sources.size());
    return p;
}

std::array<double, kNumSources> BlendPolicy::ratios_for(std::string_view locale) const {
    auto r = ratios;
    const int seg = static_cast<int>(Source::segmented);
    if (auto it = segmented_ratio.find(locale); it != segmented_ratio.end()) {
        double others = 0.0;
        for (int s = 0; s < kNumSources; ++s) {
            if (s != seg) others += r[s];
        }
        for (int s = 0; s < kNumSources; ++s) {
            if (s != seg) r[s] = others > 0.0 ? r[s] * (1.0 - it->second) / others : 0.0;
        }
        r[seg] = it->second;
    }
    double total = std::accumulate(r.begin(), r.end(), 0.0);
    if (total > 0.0) {
        for (auto& x : r) x /= total;
    }
    return r;
}

void BlendPolicy::validate() const {
    double total = 0.0;
    for (double x : ratios) {
        if (!std::isfinite(x) || x < 0.0) throw Error("blend ratios must be finite and non-negative");
        total += x;
    }
    if (std::abs(total - 1.0) > 1e-6) throw Error("blend ratios must sum to 1");
    for (const auto& [locale, x] : segmented_ratio) {
        if (!(x >= 0.0 && x <= 1.0)) throw Error("segmented ratio for " + locale + " outside [0, 1]");
    }
}

BlendPolicy parse_blend_policy(std::string_view json_text) {
    BlendPolicy p;
    try {
        auto j = json::parse(json_text);
        for (const auto& [name, value] : j.at("ratios").items()) {
            p.ratios[static_cast<int>(parse_source(name))] = value.get<double>();
        }
        if (j.contains("segmented_by_locale")) {
            for (const auto& [locale, value] : j["segmented_by_locale"].items()) {
                p.segmented_ratio[locale] = value.get<double>();
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad blend policy: ") + e.what());
    }
    p.validate();
    return p;
}

BlendPolicy load_blend_policy(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_blend_policy(ss.str());
}

CandidateSet blend(const std::vector<CandidateSet>& sets, const BlendPolicy& policy, std::size_t budget,
                   std::uint64_t seed, std::string_view viewer_locale) {
    CandidateSet out;
    if (!sets.empty()) out.query_signature = sets.front().query_signature;
    std::unordered_set<std::string> queries;
    for (const auto& s : sets) queries.insert(s.query_signature);

    // Winner per signature: highest-priority source, then highest score.
    std::unordered_map<std::string, CandidateEntry> winner;
    for (const auto& s : sets) {
        for (const auto& e : s.entries) {
            if (queries.count(e.signature)) continue;
            auto [it, inserted] = winner.emplace(e.signature, e);
            if (inserted) continue;
            auto& w = it->second;
            if (e.source < w.source || (e.source == w.source && e.generator_score > w.generator_score)) w = e;
        }
    }
    std::array<std::vector<CandidateEntry>, kNumSources> queues;
    for (auto& [sig, e] : winner) queues[static_cast<int>(e.source)].push_back(e);
    for (auto& q : queues) sort_by_score(q);

    const auto ratios = policy.ratios_for(viewer_locale);
    std::array<int, kNumSources> tie_order;
    std::iota(tie_order.begin(), tie_order.end(), 0);
    {
        Rng rng(seed);
        for (std::size_t i = tie_order.size(); i > 1; --i) std::swap(tie_order[i - 1], tie_order[rng.below(i)]);
    }
    std::array<std::size_t, kNumSources> taken{};
    for (std::size_t filled = 0; filled < budget; ++filled) {
        int pick = -1;
        double best_deficit = 0.0;
        for (int s : tie_order) {
            if (ratios[s] <= 0.0 || taken[s] >= queues[s].size()) continue;
            double deficit = ratios[s] * static_cast<double>(filled + 1) - static_cast<double>(taken[s]);
            if (pick < 0 || deficit > best_deficit + 1e-12) {
                pick = s;
                best_deficit = deficit;
            }
        }
        if (pick < 0) break;
        out.entries.push_back(queues[pick][taken[pick]++]);
    }
    return out;
}

}  // namespace relrec
