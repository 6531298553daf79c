#include "relrec/memboost.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace relrec {

using nlohmann::json;

namespace {

constexpr char kStoreMagic[8] = {'R', 'R', 'M', 'B', 'S', 'T', 'O', 'R'};
constexpr std::uint32_t kStoreVersion = 1;

struct Counts {
    std::vector<std::uint64_t> impressions;
    std::vector<std::array<std::uint64_t, kNumMbActions>> events;

    void grow(std::size_t rank) {
        if (impressions.size() <= rank) {
            impressions.resize(rank + 1, 0);
            events.resize(rank + 1, {});
        }
    }
};

PositionPriors::Table to_table(const Counts& c) {
    PositionPriors::Table t;
    const std::size_t n = c.impressions.size();
    t.impressions = c.impressions;
    t.rates.assign(n, {});
    std::vector<std::size_t> observed;
    for (std::size_t k = 0; k < n; ++k) {
        if (c.impressions[k] == 0) continue;
        observed.push_back(k);
        for (int a = 0; a < kNumMbActions; ++a) {
            double r = static_cast<double>(c.events[k][a]) / static_cast<double>(c.impressions[k]);
            t.rates[k][a] = std::clamp(r, 0.0, 1.0);
        }
    }
    if (observed.empty()) return t;
    for (std::size_t k = 0; k < observed.front(); ++k) t.rates[k] = t.rates[observed.front()];
    for (std::size_t i = 0; i + 1 < observed.size(); ++i) {
        std::size_t lo = observed[i], hi = observed[i + 1];
        for (std::size_t k = lo + 1; k < hi; ++k) {
            double w = static_cast<double>(k - lo) / static_cast<double>(hi - lo);
            for (int a = 0; a < kNumMbActions; ++a) t.rates[k][a] = (1.0 - w) * t.rates[lo][a] + w * t.rates[hi][a];
        }
    }
    // trailing ranks cannot be unobserved: the table ends at the last impression
    return t;
}

double table_rate(const PositionPriors::Table& t, MbAction a, int rank) {
    if (t.rates.empty()) return 0.0;
    std::size_t k = static_cast<std::size_t>(std::clamp(rank, 0, static_cast<int>(t.rates.size()) - 1));
    return t.rates[k][static_cast<int>(a)];
}

struct PairKey {
    std::string query;
    std::string result;
    bool operator==(const PairKey&) const = default;
};

struct PairKeyHash {
    std::size_t operator()(const PairKey& k) const {
        return static_cast<std::size_t>(mix64(stable_hash64(k.query) ^ (stable_hash64(k.result) * 31)));
    }
};

bool record_less(const MemboostStore::Record& a, const MemboostStore::Record& b) {
    if (a.query != b.query) return a.query < b.query;
    return a.result < b.result;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated memboost store");
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    auto n = read_pod<std::uint32_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw Error("truncated memboost store");
    return s;
}

json table_to_json(const PositionPriors::Table& t) {
    json rates = json::array();
    for (const auto& r : t.rates) rates.push_back(r);
    return {{"rates", rates}, {"impressions", t.impressions}};
}

PositionPriors::Table table_from_json(const json& j) {
    PositionPriors::Table t;
    for (const auto& r : j.at("rates")) t.rates.push_back(r.get<std::array<double, kNumMbActions>>());
    t.impressions = j.at("impressions").get<std::vector<std::uint64_t>>();
    if (t.impressions.size() != t.rates.size()) throw Error("priors: rates and impressions differ in length");
    return t;
}

}  // namespace

std::optional<MbAction> to_mb_action(Action a) {
    switch (a) {
        case Action::click: return MbAction::click;
        case Action::long_click: return MbAction::long_click;
        case Action::closeup: return MbAction::closeup;
        case Action::save: return MbAction::save;
        case Action::impression: return std::nullopt;
    }
    return std::nullopt;
}

std::string_view to_string(MbAction a) {
    switch (a) {
        case MbAction::click: return "click";
        case MbAction::long_click: return "long_click";
        case MbAction::closeup: return "closeup";
        case MbAction::save: return "save";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// priors

double PositionPriors::rate(MbAction a, std::string_view platform, int rank) const {
    const Table* t = table(platform);
    return table_rate(t != nullptr ? *t : pooled_, a, rank);
}

int PositionPriors::max_rank(std::string_view platform) const {
    const Table* t = table(platform);
    return t == nullptr ? -1 : static_cast<int>(t->rates.size()) - 1;
}

std::vector<std::string> PositionPriors::platforms() const {
    std::vector<std::string> out;
    for (const auto& [p, t] : by_platform_) out.push_back(p);
    return out;
}

const PositionPriors::Table* PositionPriors::table(std::string_view platform) const {
    auto it = by_platform_.find(platform);
    return it == by_platform_.end() ? nullptr : &it->second;
}

bool PositionPriors::operator==(const PositionPriors& o) const {
    auto eq = [](const Table& a, const Table& b) { return a.rates == b.rates && a.impressions == b.impressions; };
    if (by_platform_.size() != o.by_platform_.size() || !eq(pooled_, o.pooled_)) return false;
    for (const auto& [p, t] : by_platform_) {
        const Table* other = o.table(p);
        if (other == nullptr || !eq(t, *other)) return false;
    }
    return true;
}

PositionPriors compute_priors(const EngagementLog& log) {
    std::map<std::string, Counts, std::less<>> counts;
    Counts pooled;
    for (const auto& e : log.events()) {
        std::size_t rank = static_cast<std::size_t>(std::max(e.rank, 0));
        auto& c = counts[e.platform];
        c.grow(rank);
        pooled.grow(rank);
        if (e.action == Action::impression) {
            ++c.impressions[rank];
            ++pooled.impressions[rank];
        } else if (auto a = to_mb_action(e.action)) {
            ++c.events[rank][static_cast<int>(*a)];
            ++pooled.events[rank][static_cast<int>(*a)];
        }
    }
    PositionPriors p;
    for (auto& [platform, c] : counts) {
        // ranks that only carry actions (no impressions) do not extend the table
        while (!c.impressions.empty() && c.impressions.back() == 0) {
            c.impressions.pop_back();
            c.events.pop_back();
        }
        if (!c.impressions.empty()) p.by_platform_.emplace(platform, to_table(c));
    }
    while (!pooled.impressions.empty() && pooled.impressions.back() == 0) {
        pooled.impressions.pop_back();
        pooled.events.pop_back();
    }
    p.pooled_ = to_table(pooled);
    return p;
}

std::string priors_to_json(const PositionPriors& priors) {
    json j;
    j["format"] = "relrec-priors";
    j["version"] = 1;
    j["actions"] = {"click", "long_click", "closeup", "save"};
    j["pooled"] = table_to_json(priors.pooled());
    json platforms = json::object();
    for (const auto& p : priors.platforms()) platforms[p] = table_to_json(*priors.table(p));
    j["platforms"] = platforms;
    return j.dump(1);
}

PositionPriors priors_from_json(std::string_view text) {
    PositionPriors p;
    try {
        auto j = json::parse(text);
        if (j.value("format", "") != "relrec-priors" || j.value("version", 0) != 1) throw Error("not a priors file");
        p.pooled_ = table_from_json(j.at("pooled"));
        for (const auto& [name, t] : j.at("platforms").items()) p.by_platform_.emplace(name, table_from_json(t));
    } catch (const json::exception& e) {
        throw Error(std::string("bad priors file: ") + e.what());
    }
    return p;
}

// ---------------------------------------------------------------------------
// store

MemboostStore::MemboostStore(std::vector<Record> records) : records_(std::move(records)) {
    std::sort(records_.begin(), records_.end(), record_less);
    for (std::size_t i = 1; i < records_.size(); ++i) {
        if (!record_less(records_[i - 1], records_[i])) throw Error("duplicate memboost key");
    }
}

const MemboostStats* MemboostStore::find(std::string_view query, std::string_view result) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), std::pair{query, result},
                               [](const Record& r, const std::pair<std::string_view, std::string_view>& k) {
                                   if (r.query != k.first) return r.query < k.first;
                                   return r.result < k.second;
                               });
    if (it == records_.end() || it->query != query || it->result != result) return nullptr;
    return &it->stats;
}

std::span<const MemboostStore::Record> MemboostStore::for_query(std::string_view query) const {
    auto lo = std::lower_bound(records_.begin(), records_.end(), query,
                               [](const Record& r, std::string_view q) { return r.query < q; });
    auto hi = std::upper_bound(lo, records_.end(), query,
                               [](std::string_view q, const Record& r) { return q < r.query; });
    return {records_.data() + (lo - records_.begin()), static_cast<std::size_t>(hi - lo)};
}

MemboostStore accumulate(std::span<const EngagementEvent> events, const PositionPriors& priors) {
    std::unordered_map<PairKey, MemboostStats, PairKeyHash> stats;
    for (const auto& e : events) {
        if (e.action != Action::impression) continue;
        auto& s = stats[{e.query_signature, e.result_signature}];
        ++s.impressions;
        for (int a = 0; a < kNumMbActions; ++a) s.expected[a] += priors.rate(static_cast<MbAction>(a), e.platform, e.rank);
    }
    for (const auto& e : events) {
        auto a = to_mb_action(e.action);
        if (!a) continue;
        auto it = stats.find({e.query_signature, e.result_signature});
        if (it == stats.end()) continue;  // orphan action
        it->second.counts[static_cast<int>(*a)] += 1.0;
    }
    std::vector<MemboostStore::Record> records;
    records.reserve(stats.size());
    for (auto& [key, s] : stats) records.push_back({key.query, key.result, s});
    return MemboostStore(std::move(records));
}

MemboostStore accumulate(const EngagementLog& log, const PositionPriors& priors) {
    return accumulate(std::span<const EngagementEvent>(log.events()), priors);
}

MemboostStore merge(const MemboostStore& a, const MemboostStore& b) {
    std::vector<MemboostStore::Record> out;
    std::merge(a.records().begin(), a.records().end(), b.records().begin(), b.records().end(),
               std::back_inserter(out), record_less);
    std::vector<MemboostStore::Record> folded;
    for (auto& r : out) {
        if (!folded.empty() && folded.back().query == r.query && folded.back().result == r.result) {
            auto& s = folded.back().stats;
            for (int k = 0; k < kNumMbActions; ++k) {
                s.counts[k] += r.stats.counts[k];
                s.expected[k] += r.stats.expected[k];
            }
            s.impressions += r.stats.impressions;
        } else {
            folded.push_back(std::move(r));
        }
    }
    return MemboostStore(std::move(folded));
}

void save_store(const MemboostStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kStoreMagic, sizeof kStoreMagic);
    write_pod(out, kStoreVersion);
    write_pod(out, static_cast<std::uint64_t>(store.size()));
    for (const auto& r : store.records()) {
        write_string(out, r.query);
        write_string(out, r.result);
        write_pod(out, r.stats.impressions);
        for (double x : r.stats.counts) write_pod(out, x);
        for (double x : r.stats.expected) write_pod(out, x);
    }
    if (!out) throw Error("write failed: " + path.string());
}

MemboostStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    char magic[sizeof kStoreMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kStoreMagic, sizeof magic) != 0) throw Error("not a memboost store: " + path.string());
    if (read_pod<std::uint32_t>(in) != kStoreVersion) throw Error("unsupported memboost store version");
    auto n = read_pod<std::uint64_t>(in);
    std::vector<MemboostStore::Record> records;
    records.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        MemboostStore::Record r;
        r.query = read_string(in);
        r.result = read_string(in);
        r.stats.impressions = read_pod<std::uint64_t>(in);
        for (auto& x : r.stats.counts) x = read_pod<double>(in);
        for (auto& x : r.stats.expected) x = read_pod<double>(in);
        records.push_back(std::move(r));
    }
    return MemboostStore(std::move(records));
}

// ---------------------------------------------------------------------------
// scoring

double mb_score(const MemboostStats& stats, const MemboostParams& params) {
    if (!(params.alpha > 0.0)) throw std::invalid_argument("memboost: alpha must be positive");
    double actions = 0.0, expected = 0.0;
    for (int a = 0; a < kNumMbActions; ++a) {
        actions += params.beta[a] * stats.counts[a];
        expected += params.beta[a] * stats.expected[a];
    }
    return std::log((actions + params.alpha) / (expected + params.alpha));
}

void apply_memboost(std::vector<ScoredResult>& ranked, std::string_view query, const MemboostStore& store,
                    const MemboostParams& params) {
    if (params.gamma == 0.0) return;
    for (auto& r : ranked) {
        if (const MemboostStats* s = store.find(query, r.signature)) {
            r.score = memboosted_score(r.score, mb_score(*s, params), params.gamma);
        }
    }
    sort_by_score(ranked);
}

std::vector<ScoredResult> memboost_insert(std::vector<ScoredResult> ranked, const MemboostStore& store,
                                          const MemboostParams& params, std::string_view query) {
    if (params.insert_count == 0) return ranked;
    std::unordered_set<std::string_view> present;
    for (const auto& r : ranked) present.insert(r.signature);

    std::vector<std::pair<double, const MemboostStore::Record*>> absent;
    for (const auto& rec : store.for_query(query)) {
        if (rec.result == query || present.count(rec.result)) continue;
        double mb = mb_score(rec.stats, params);
        if (mb > 0.0) absent.emplace_back(mb, &rec);
    }
    std::sort(absent.begin(), absent.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second->result < b.second->result;
    });
    if (absent.size() > params.insert_count) absent.resize(params.insert_count);
    if (absent.empty()) return ranked;

    double floor = 0.0;
    if (!ranked.empty()) {
        floor = ranked.front().score;
        for (const auto& r : ranked) floor = std::min(floor, r.score);
    }
    for (const auto& [mb, rec] : absent) {
        ScoredResult ins;
        ins.signature = rec->result;
        ins.score = memboosted_score(floor, mb, params.gamma);
        ins.memboost_inserted = true;
        auto pos = std::find_if(ranked.begin(), ranked.end(), [&](const ScoredResult& r) { return r.score < ins.score; });
        ranked.insert(pos, std::move(ins));
    }
    return ranked;
}

std::array<double, kMemboostFeatureCount> memboost_features(const MemboostStats* stats, double alpha) {
    std::array<double, kMemboostFeatureCount> f{};
    if (stats == nullptr) return f;
    for (int a = 0; a < kNumMbActions; ++a) {
        f[a] = stats->counts[a];
        f[kNumMbActions + a] = stats->expected[a];
        f[2 * kNumMbActions + a] = std::log((stats->counts[a] + alpha) / (stats->expected[a] + alpha));
    }
    return f;
}

std::array<double, kMemboostFeatureCount> memboost_features(const MemboostStore& store, std::string_view query,
                                                             std::string_view result, double alpha) {
    return memboost_features(store.find(query, result), alpha);
}

std::vector<std::string> memboost_feature_names() {
    std::vector<std::string> names;
    for (const char* prefix : {"mb_count_", "mb_expected_", "mb_ratio_"}) {
        for (int a = 0; a < kNumMbActions; ++a) names.push_back(prefix + std::string(to_string(static_cast<MbAction>(a))));
    }
    return names;
}

}  // namespace relrec
