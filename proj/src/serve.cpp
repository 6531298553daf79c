#include "relrec/serve.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "relrec/simulator.hpp"

namespace relrec {

using json = nlohmann::json;

namespace {

std::uint64_t parse_hex(std::string_view s) {
    if (s.starts_with("0x") || s.starts_with("0X")) s.remove_prefix(2);
    if (s.empty() || s.size() > 16) throw Error("bad hash bound: " + std::string(s));
    std::uint64_t v = 0;
    for (char c : s) {
        int d;
        if (c >= '0' && c <= '9') d = c - '0';
        else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
        else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
        else throw Error("bad hash bound: " + std::string(s));
        v = (v << 4) | static_cast<std::uint64_t>(d);
    }
    return v;
}

json user_json(const UserContext& u) {
    return {{"gender", u.gender},
            {"country", u.country},
            {"language", u.language},
            {"recent_search", u.recent_search_tokens},
            {"recent_activity", u.recent_activity_signatures},
            {"long_term_cat", u.long_term_category_vector}};
}

UserContext user_from(const json& j) {
    UserContext u;
    u.gender = j.value("gender", std::string{});
    u.country = j.value("country", std::string{});
    u.language = j.value("language", std::string{});
    u.recent_search_tokens = j.value("recent_search", std::vector<std::string>{});
    u.recent_activity_signatures = j.value("recent_activity", std::vector<std::string>{});
    u.long_term_category_vector = j.value("long_term_cat", std::vector<double>{});
    return u;
}

json stats_json(const MemboostStats& s) {
    return {{"counts", s.counts}, {"expected", s.expected}, {"impressions", s.impressions}};
}

MemboostStats stats_from(const json& j) {
    MemboostStats s;
    s.counts = j.at("counts").get<std::array<double, kNumMbActions>>();
    s.expected = j.at("expected").get<std::array<double, kNumMbActions>>();
    s.impressions = j.at("impressions").get<std::uint64_t>();
    return s;
}

json scored_json(const ScoredResult& r) {
    return {{"signature", r.signature},
            {"source", std::string(to_string(r.source))},
            {"gen_score", r.generator_score},
            {"score", r.score},
            {"inserted", r.memboost_inserted}};
}

ScoredResult scored_from(const json& j) {
    ScoredResult r;
    r.signature = j.at("signature").get<std::string>();
    r.source = parse_source(j.at("source").get<std::string>());
    r.generator_score = j.at("gen_score").get<double>();
    r.score = j.at("score").get<double>();
    r.memboost_inserted = j.value("inserted", false);
    return r;
}

template <class Fn>
auto parse_or_throw(std::string_view text, const char* what, Fn fn) {
    try {
        return fn(json::parse(text));
    } catch (const json::exception& e) {
        throw Error(std::string("bad ") + what + ": " + e.what());
    }
}

bool unknown_query(const std::vector<CandidateSet>& sets) {
    return std::all_of(sets.begin(), sets.end(),
                       [](const CandidateSet& s) { return s.status == CandidateStatus::unknown_query; });
}

// Steps shared by the root and the reference after the global top-k is known.
void finish(const PipelineState& state, const RelatedRequest& request, std::vector<ScoredResult> ranked,
            RelatedResponse& out) {
    const auto& cfg = state.config;
    if (state.store) {
        if (cfg.memboost_boost) apply_memboost(ranked, request.query, *state.store, cfg.memboost);
        if (cfg.memboost_insert) {
            ranked = memboost_insert(std::move(ranked), *state.store, cfg.memboost, request.query);
            if (ranked.size() > request.top_k) ranked.resize(request.top_k);
        }
    }
    out.results.clear();
    out.generator_scores.clear();
    for (const auto& r : ranked) {
        const CandidateEntry entry{r.signature, r.source, r.generator_score};
        out.results.push_back(state.pins ? to_served(entry, r.score, *state.pins)
                                         : ServedResult{r.signature, {}, {}, r.score, r.source});
        out.generator_scores.push_back(r.memboost_inserted ? 0.0 : r.generator_score);
    }
    if (cfg.local_swap && state.pins && !request.user.language.empty()) {
        out.results = local_swap(std::move(out.results), request.user.language, *state.pins);
    }
}

// Blends the candidates, or explains why there are none. Returns false when
// the response is complete.
bool prepare(const PipelineState& state, const RelatedRequest& request, RelatedResponse& out, CandidateSet& blended) {
    out.query = request.query;
    out.tag = "ranked";
    if (request.top_k == 0) return false;
    const auto sets = state.candidates ? state.candidates(request.query, request.user) : std::vector<CandidateSet>{};
    if (unknown_query(sets)) {
        out.reason = "unknown query: " + request.query;
        return false;
    }
    const auto& cfg = state.config;
    blended = blend(sets, cfg.blend, cfg.candidate_budget, derive_seed(cfg.seed, request.query), request.user.language);
    if (blended.empty()) {
        out.reason = "no candidates";
        return false;
    }
    return true;
}

// Gated sessions get the blended candidates in a seeded random order.
bool serve_unranked(const PipelineState& state, const RelatedRequest& request, const CandidateSet& blended,
                    RelatedResponse& out) {
    const auto& cfg = state.config;
    if (!unbiased_gate(request.user_id, request.query, cfg.unbiased_fraction, derive_seed(cfg.seed, "gate"))) {
        return false;
    }
    auto entries = blended.entries;
    Rng rng(derive_seed(derive_seed(cfg.seed, "unbiased"), request.user_id + '\x1f' + request.query));
    rng.shuffle(entries);
    if (entries.size() > request.top_k) entries.resize(request.top_k);
    std::vector<ScoredResult> ranked;
    for (const auto& e : entries) ranked.push_back({e.signature, e.source, e.generator_score, 0.0, false});
    PipelineState plain = state;
    plain.store = nullptr;  // no memboost on unranked traffic
    finish(plain, request, std::move(ranked), out);
    out.tag = "unbiased";
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// sharding

ShardRange parse_range(std::string_view text) {
    const auto colon = text.find(':');
    if (colon == std::string_view::npos) throw Error("range must be A:B: " + std::string(text));
    ShardRange r{parse_hex(text.substr(0, colon)), parse_hex(text.substr(colon + 1))};
    if (r.lo > r.hi) throw Error("empty range: " + std::string(text));
    return r;
}

std::string to_string(const ShardRange& r) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%016llx:%016llx", static_cast<unsigned long long>(r.lo),
                  static_cast<unsigned long long>(r.hi));
    return buf;
}

ShardMap::ShardMap(std::vector<LeafAddress> leaves) : leaves_(std::move(leaves)) {
    if (leaves_.empty()) throw Error("shard map has no leaves");
    std::sort(leaves_.begin(), leaves_.end(), [](const auto& a, const auto& b) { return a.range.lo < b.range.lo; });
    std::set<std::string> ids;
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
        const auto& r = leaves_[i].range;
        if (r.lo > r.hi) throw Error("empty range for leaf " + leaves_[i].id);
        if (!ids.insert(leaves_[i].id).second) throw Error("duplicate leaf id " + leaves_[i].id);
        if (i == 0 && r.lo != 0) throw Error("shard map does not start at 0");
        if (i > 0 && r.lo != leaves_[i - 1].range.hi + 1) throw Error("shard ranges leave a gap or overlap");
    }
    if (leaves_.back().range.hi != ~std::uint64_t{0}) throw Error("shard map does not reach the end of the hash space");
}

ShardMap ShardMap::even(std::size_t n) {
    if (n == 0) throw Error("shard map needs at least one leaf");
    std::vector<LeafAddress> leaves;
    using u128 = unsigned __int128;
    const u128 space = u128{1} << 64;
    for (std::size_t i = 0; i < n; ++i) {
        const auto lo = static_cast<std::uint64_t>(space * i / n);
        const auto hi = static_cast<std::uint64_t>(space * (i + 1) / n - 1);
        leaves.push_back({"leaf" + std::to_string(i), {lo, hi}, {}});
    }
    return ShardMap(std::move(leaves));
}

std::size_t ShardMap::leaf_of(std::string_view signature) const {
    const std::uint64_t h = signature_hash(signature);
    auto it = std::upper_bound(leaves_.begin(), leaves_.end(), h,
                               [](std::uint64_t v, const LeafAddress& l) { return v < l.range.lo; });
    return static_cast<std::size_t>(it - leaves_.begin()) - 1;
}

ShardMap parse_shard_map(std::string_view json_text) {
    return parse_or_throw(json_text, "shard map", [](const json& j) {
        std::vector<LeafAddress> leaves;
        for (const auto& l : j.at("leaves")) {
            leaves.push_back({l.at("id").get<std::string>(), parse_range(l.at("range").get<std::string>()),
                              l.value("url", std::string{})});
        }
        return ShardMap(std::move(leaves));
    });
}

std::string shard_map_to_json(const ShardMap& map) {
    json leaves = json::array();
    for (const auto& l : map.leaves()) {
        json jl = {{"id", l.id}, {"range", to_string(l.range)}};
        if (!l.url.empty()) jl["url"] = l.url;
        leaves.push_back(jl);
    }
    return json{{"leaves", leaves}}.dump(2);
}

// ---------------------------------------------------------------------------
// wire

std::string rank_request_to_json(const RankRequest& r) {
    json cands = json::array();
    for (const auto& c : r.candidates) {
        cands.push_back({{"signature", c.signature}, {"source", std::string(to_string(c.source))},
                         {"gen_score", c.generator_score}});
    }
    json mb = json::array();
    for (const auto& f : r.memboost) mb.push_back({{"result", f.result}, {"stats", stats_json(f.stats)}});
    return json{{"query", r.query},       {"user", user_json(r.user)}, {"candidates", cands},
                {"memboost", mb},         {"top_k", r.top_k},          {"deadline_ms", r.deadline_ms}}
        .dump();
}

RankRequest rank_request_from_json(std::string_view text) {
    return parse_or_throw(text, "rank request", [](const json& j) {
        RankRequest r;
        r.query = j.at("query").get<std::string>();
        r.user = user_from(j.value("user", json::object()));
        for (const auto& c : j.at("candidates")) {
            r.candidates.push_back({c.at("signature").get<std::string>(),
                                    parse_source(c.value("source", std::string("board_cooc"))),
                                    c.value("gen_score", 0.0)});
        }
        for (const auto& f : j.value("memboost", json::array())) {
            r.memboost.push_back({f.at("result").get<std::string>(), stats_from(f.at("stats"))});
        }
        r.top_k = j.value("top_k", std::size_t{10});
        r.deadline_ms = j.value("deadline_ms", 100);
        return r;
    });
}

std::string rank_response_to_json(const RankResponse& r) {
    json results = json::array();
    for (const auto& s : r.results) results.push_back(scored_json(s));
    return json{{"leaf", r.leaf},
                {"results", results},
                {"unknown", r.unknown},
                {"not_owned", r.not_owned},
                {"elapsed_ms", r.elapsed_ms}}
        .dump();
}

RankResponse rank_response_from_json(std::string_view text) {
    return parse_or_throw(text, "rank response", [](const json& j) {
        RankResponse r;
        r.leaf = j.value("leaf", std::string{});
        for (const auto& s : j.at("results")) r.results.push_back(scored_from(s));
        r.unknown = j.value("unknown", std::vector<std::string>{});
        r.not_owned = j.value("not_owned", std::vector<std::string>{});
        r.elapsed_ms = j.value("elapsed_ms", 0.0);
        return r;
    });
}

std::string related_response_to_json(const RelatedResponse& r) {
    json results = json::array();
    for (std::size_t i = 0; i < r.results.size(); ++i) {
        const auto& s = r.results[i];
        results.push_back({{"signature", s.signature},
                           {"pin_id", s.pin_id},
                           {"locale", s.locale},
                           {"score", s.score},
                           {"source", std::string(to_string(s.source))},
                           {"gen_score", i < r.generator_scores.size() ? r.generator_scores[i] : 0.0}});
    }
    json leaves = json::array();
    for (const auto& l : r.leaves) {
        json jl = {{"leaf", l.leaf}, {"ms", l.ms}, {"candidates", l.candidates}, {"timed_out", l.timed_out}};
        if (!l.error.empty()) jl["error"] = l.error;
        leaves.push_back(jl);
    }
    json j = {{"query", r.query}, {"results", results}, {"tag", r.tag},
              {"partial", r.partial}, {"leaves", leaves}, {"unknown", r.unknown}};
    if (!r.reason.empty()) j["reason"] = r.reason;
    return j.dump();
}

// ---------------------------------------------------------------------------
// leaf

Leaf::Leaf(std::string id, ShardRange range, std::shared_ptr<const PinCorpus> pins,
           std::shared_ptr<const RankingModel> model, FeatureConfig features, double memboost_alpha)
    : id_(std::move(id)),
      range_(range),
      pins_(std::move(pins)),
      schema_(features),
      alpha_(memboost_alpha),
      model_(std::move(model)) {
    if (!pins_) throw std::invalid_argument("Leaf: no pin store");
}

void Leaf::set_model(std::shared_ptr<const RankingModel> model) {
    std::lock_guard lock(model_mu_);
    model_ = std::move(model);
}

std::shared_ptr<const RankingModel> Leaf::model() const {
    std::lock_guard lock(model_mu_);
    return model_;
}

RankResponse Leaf::rank(const RankRequest& request) const {
    const auto start = std::chrono::steady_clock::now();
    const auto model = this->model();  // one model for the whole request
    if (!model) throw Error("leaf " + id_ + " has no model");

    std::optional<MemboostStore> store;
    if (!request.memboost.empty()) {
        std::vector<MemboostStore::Record> records;
        for (const auto& f : request.memboost) records.push_back({request.query, f.result, f.stats});
        store.emplace(std::move(records));
    }
    const Featurizer featurizer(schema_, *pins_, store ? &*store : nullptr, alpha_);

    RankResponse out;
    out.leaf = id_;
    for (const auto& c : request.candidates) {
        if (!owns(c.signature)) {
            out.not_owned.push_back(c.signature);
            continue;
        }
        auto fv = featurizer.features(request.query, request.user, c.signature, c.source, c.generator_score);
        if (!fv) {
            out.unknown.push_back(c.signature);
            continue;
        }
        out.results.push_back({c.signature, c.source, c.generator_score, model->score(*fv), false});
    }
    sort_by_score(out.results);
    if (out.results.size() > request.top_k) out.results.resize(request.top_k);
    out.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return out;
}

namespace {

class LocalLeafClient : public LeafClient {
  public:
    LocalLeafClient(std::shared_ptr<const Leaf> leaf, std::chrono::milliseconds delay)
        : leaf_(std::move(leaf)), delay_(delay) {}
    RankResponse rank(const RankRequest& request) override {
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        return leaf_->rank(request);
    }

  private:
    std::shared_ptr<const Leaf> leaf_;
    std::chrono::milliseconds delay_;
};

class HttpLeafClient : public LeafClient {
  public:
    explicit HttpLeafClient(std::string url) : url_(std::move(url)) {}
    RankResponse rank(const RankRequest& request) override {
        httplib::Client cli(url_);
        const auto timeout = std::chrono::milliseconds(std::max(request.deadline_ms, 1) + 1000);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        auto res = cli.Post("/leaf/rank", rank_request_to_json(request), "application/json");
        if (!res) throw Error("leaf " + url_ + ": " + httplib::to_string(res.error()));
        if (res->status != 200) throw Error("leaf " + url_ + ": HTTP " + std::to_string(res->status) + " " + res->body);
        return rank_response_from_json(res->body);
    }

  private:
    std::string url_;
};

}  // namespace

std::shared_ptr<LeafClient> local_leaf_client(std::shared_ptr<const Leaf> leaf, std::chrono::milliseconds delay) {
    return std::make_shared<LocalLeafClient>(std::move(leaf), delay);
}

std::shared_ptr<LeafClient> http_leaf_client(std::string url) { return std::make_shared<HttpLeafClient>(std::move(url)); }

// ---------------------------------------------------------------------------
// candidates

CandidateTable load_candidate_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    CandidateTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = json::parse(line);
            CandidateSet s;
            s.query_signature = j.at("query").get<std::string>();
            const auto status = j.value("status", std::string("ok"));
            s.status = status == "ok"               ? CandidateStatus::ok
                       : status == "unknown_query"  ? CandidateStatus::unknown_query
                       : status == "out_of_vocab"   ? CandidateStatus::out_of_vocab
                       : status == "degenerate_query" ? CandidateStatus::degenerate_query
                       : status == "near_duplicate" ? CandidateStatus::near_duplicate
                                                    : throw Error("unknown status " + status);
            for (const auto& e : j.at("entries")) {
                s.entries.push_back({e.at("signature").get<std::string>(),
                                     parse_source(e.value("source", std::string("board_cooc"))),
                                     e.value("score", 0.0)});
            }
            table[s.query_signature].push_back(std::move(s));
        } catch (const std::exception& e) {
            throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return table;
}

void write_candidate_table(const CandidateTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& [query, sets] : table) {
        for (const auto& s : sets) {
            json entries = json::array();
            for (const auto& e : s.entries) {
                entries.push_back({{"signature", e.signature},
                                   {"source", std::string(to_string(e.source))},
                                   {"score", e.generator_score}});
            }
            out << json{{"query", query}, {"status", std::string(to_string(s.status))}, {"entries", entries}}.dump()
                << '\n';
        }
    }
}

CandidateSource table_source(std::shared_ptr<const CandidateTable> table) {
    return [table = std::move(table)](std::string_view query, const UserContext&) {
        auto it = table->find(query);
        return it == table->end() ? std::vector<CandidateSet>{} : it->second;
    };
}

// ---------------------------------------------------------------------------
// logs

std::vector<EngagementEvent> serve_log_events(const RelatedRequest& request, const RelatedResponse& response) {
    std::vector<EngagementEvent> out;
    for (std::size_t i = 0; i < response.results.size(); ++i) {
        EngagementEvent e;
        e.action = Action::impression;
        e.query_signature = request.query;
        e.result_signature = response.results[i].signature;
        e.platform = request.platform;
        e.rank = static_cast<int>(i);
        e.user_id = request.user_id;
        e.timestamp = request.timestamp;
        e.session_id = request.session_id;
        e.source = response.results[i].source;
        e.generator_score = i < response.generator_scores.size() ? response.generator_scores[i] : 0.0;
        e.tag = response.tag;
        out.push_back(std::move(e));
    }
    return out;
}

LogSink file_log_sink(const std::filesystem::path& path) {
    struct State {
        std::mutex mu;
        std::ofstream out;
    };
    auto st = std::make_shared<State>();
    st->out.open(path, std::ios::app);
    if (!st->out) throw Error("cannot write " + path.string());
    return [st](const std::vector<EngagementEvent>& events) {
        std::lock_guard lock(st->mu);
        for (const auto& e : events) st->out << event_to_json_line(e) << '\n';
        st->out.flush();
    };
}

// ---------------------------------------------------------------------------
// root

Root::Root(ShardMap shards, std::vector<std::shared_ptr<LeafClient>> leaves, PipelineState state)
    : shards_(std::move(shards)), leaves_(std::move(leaves)), state_(std::move(state)) {
    if (leaves_.size() != shards_.leaves().size()) throw std::invalid_argument("Root: one client per shard required");
}

RelatedResponse Root::related(const RelatedRequest& request) const {
    RelatedResponse out;
    CandidateSet blended;
    if (!prepare(state_, request, out, blended)) return out;
    if (serve_unranked(state_, request, blended, out)) {
        if (sink_) sink_(serve_log_events(request, out));
        return out;
    }

    // scatter: each leaf gets only the candidates it owns
    const std::size_t n = leaves_.size();
    std::vector<RankRequest> sub(n);
    for (auto& r : sub) {
        r.query = request.query;
        r.user = request.user;
        r.top_k = request.top_k;
        r.deadline_ms = state_.config.deadline_ms;
    }
    for (const auto& c : blended.entries) {
        auto& r = sub[shards_.leaf_of(c.signature)];
        r.candidates.push_back(c);
        if (state_.store) {
            if (const MemboostStats* s = state_.store->find(request.query, c.signature)) {
                r.memboost.push_back({c.signature, *s});
            }
        }
    }

    struct Gather {
        std::mutex mu;
        std::condition_variable cv;
        std::vector<std::optional<RankResponse>> responses;
        std::vector<std::string> errors;
        std::vector<double> ms;
        std::size_t done = 0;
    };
    auto g = std::make_shared<Gather>();
    g->responses.resize(n);
    g->errors.resize(n);
    g->ms.resize(n, 0.0);
    const auto start = std::chrono::steady_clock::now();
    std::size_t calls = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (sub[i].candidates.empty()) continue;
        ++calls;
        std::thread([g, client = leaves_[i], req = sub[i], i, start] {
            std::optional<RankResponse> res;
            std::string err;
            try {
                res = client->rank(req);
            } catch (const std::exception& e) {
                err = e.what();
            }
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            std::lock_guard lock(g->mu);
            g->responses[i] = std::move(res);
            g->errors[i] = std::move(err);
            g->ms[i] = ms;
            ++g->done;
            g->cv.notify_all();
        }).detach();
    }

    std::vector<ScoredResult> merged;
    {
        std::unique_lock lock(g->mu);
        const auto deadline = start + std::chrono::milliseconds(state_.config.deadline_ms);
        g->cv.wait_until(lock, deadline, [&] { return g->done == calls; });
        for (std::size_t i = 0; i < n; ++i) {
            if (sub[i].candidates.empty()) continue;
            LeafTiming t;
            t.leaf = shards_.leaves()[i].id;
            t.candidates = sub[i].candidates.size();
            if (g->responses[i]) {
                t.ms = g->ms[i];
                const auto& r = *g->responses[i];
                merged.insert(merged.end(), r.results.begin(), r.results.end());
                out.unknown.insert(out.unknown.end(), r.unknown.begin(), r.unknown.end());
                out.unknown.insert(out.unknown.end(), r.not_owned.begin(), r.not_owned.end());
            } else if (!g->errors[i].empty()) {
                t.ms = g->ms[i];
                t.error = g->errors[i];
                out.partial = true;
            } else {
                t.ms = static_cast<double>(state_.config.deadline_ms);
                t.timed_out = true;
                out.partial = true;
            }
            out.leaves.push_back(std::move(t));
        }
    }
    std::sort(out.unknown.begin(), out.unknown.end());

    // every leaf returned min(top_k, owned), so the merged top-k is exact
    sort_by_score(merged);
    if (merged.size() > request.top_k) merged.resize(request.top_k);
    finish(state_, request, std::move(merged), out);
    if (out.results.empty() && out.reason.empty()) out.reason = out.partial ? "no leaf answered in time" : "no scorable candidates";
    if (sink_) sink_(serve_log_events(request, out));
    return out;
}

RelatedResponse related_reference(const PipelineState& state, const PinCorpus& pins, const RankingModel& model,
                                  const RelatedRequest& request, FeatureConfig features) {
    RelatedResponse out;
    CandidateSet blended;
    if (!prepare(state, request, out, blended)) return out;
    if (serve_unranked(state, request, blended, out)) return out;

    const FeatureSchema schema(features);
    const Featurizer featurizer(schema, pins, state.store.get(), state.config.memboost.alpha);
    std::vector<ScoredResult> ranked;
    for (const auto& c : blended.entries) {
        auto fv = featurizer.features(request.query, request.user, c.signature, c.source, c.generator_score);
        if (!fv) {
            out.unknown.push_back(c.signature);
            continue;
        }
        ranked.push_back({c.signature, c.source, c.generator_score, model.score(*fv), false});
    }
    std::sort(out.unknown.begin(), out.unknown.end());
    sort_by_score(ranked);
    if (ranked.size() > request.top_k) ranked.resize(request.top_k);
    finish(state, request, std::move(ranked), out);
    if (out.results.empty() && out.reason.empty()) out.reason = "no scorable candidates";
    return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

void json_reply(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
}

std::string error_body(const std::string& what) { return json{{"error", what}}.dump(); }

int bind_server(httplib::Server& svr, const std::string& host, int port) {
    if (port == 0) {
        const int p = svr.bind_to_any_port(host);
        if (p < 0) throw Error("cannot bind " + host);
        return p;
    }
    if (!svr.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

}  // namespace

struct LeafServer::Impl {
    std::shared_ptr<Leaf> leaf;
    httplib::Server svr;
};

LeafServer::LeafServer(std::shared_ptr<Leaf> leaf) : impl_(std::make_unique<Impl>()) {
    impl_->leaf = std::move(leaf);
    auto* leafp = impl_->leaf.get();
    impl_->svr.Post("/leaf/rank", [leafp](const httplib::Request& req, httplib::Response& res) {
        try {
            json_reply(res, 200, rank_response_to_json(leafp->rank(rank_request_from_json(req.body))));
        } catch (const std::exception& e) {
            json_reply(res, 400, error_body(e.what()));
        }
    });
    impl_->svr.Post("/leaf/model", [leafp](const httplib::Request& req, httplib::Response& res) {
        try {
            leafp->set_model(std::make_shared<const RankingModel>(model_from_json(req.body)));
            json_reply(res, 200, json{{"ok", true}}.dump());
        } catch (const std::exception& e) {
            json_reply(res, 400, error_body(e.what()));
        }
    });
    impl_->svr.Get("/health", [leafp](const httplib::Request&, httplib::Response& res) {
        json_reply(res, 200,
                   json{{"leaf", leafp->id()}, {"range", to_string(leafp->range())}, {"model", leafp->model() != nullptr}}
                       .dump());
    });
}

LeafServer::~LeafServer() { stop(); }
int LeafServer::bind(const std::string& host, int port) { return bind_server(impl_->svr, host, port); }
void LeafServer::listen() { impl_->svr.listen_after_bind(); }
void LeafServer::stop() {
    if (impl_) impl_->svr.stop();
}

struct RootServer::Impl {
    std::shared_ptr<const Root> root;
    std::map<std::string, UserContext> users;
    std::atomic<std::uint64_t> counter{0};
    httplib::Server svr;
};

RootServer::RootServer(std::shared_ptr<const Root> root, std::map<std::string, UserContext> users)
    : impl_(std::make_unique<Impl>()) {
    impl_->root = std::move(root);
    impl_->users = std::move(users);
    auto* im = impl_.get();
    im->svr.Get(R"(/related/([^/?]+))", [im](const httplib::Request& req, httplib::Response& res) {
        try {
            RelatedRequest r;
            r.query = req.matches[1];
            r.user_id = req.get_param_value("user");
            if (auto it = im->users.find(r.user_id); it != im->users.end()) r.user = it->second;
            if (req.has_param("locale")) r.user.language = req.get_param_value("locale");
            if (req.has_param("k")) r.top_k = std::stoul(req.get_param_value("k"));
            if (req.has_param("platform")) r.platform = req.get_param_value("platform");
            r.session_id = req.has_param("session") ? req.get_param_value("session")
                                                    : "root-" + std::to_string(im->counter++);
            r.timestamp = req.has_param("ts") ? std::stoll(req.get_param_value("ts"))
                                              : std::chrono::duration_cast<std::chrono::seconds>(
                                                    std::chrono::system_clock::now().time_since_epoch())
                                                    .count();
            json_reply(res, 200, related_response_to_json(im->root->related(r)));
        } catch (const std::exception& e) {
            json_reply(res, 400, error_body(e.what()));
        }
    });
    im->svr.Get("/health", [](const httplib::Request&, httplib::Response& res) {
        json_reply(res, 200, json{{"ok", true}}.dump());
    });
}

RootServer::~RootServer() { stop(); }
int RootServer::bind(const std::string& host, int port) { return bind_server(impl_->svr, host, port); }
void RootServer::listen() { impl_->svr.listen_after_bind(); }
void RootServer::stop() {
    if (impl_) impl_->svr.stop();
}

void deploy_model(const ShardMap& shards, const RankingModel& model) {
    const std::string body = model_to_json(model);
    for (const auto& l : shards.leaves()) {
        if (l.url.empty()) continue;
        httplib::Client cli(l.url);
        cli.set_connection_timeout(std::chrono::seconds(5));
        auto res = cli.Post("/leaf/model", body, "application/json");
        if (!res) throw Error("deploy to " + l.id + ": " + httplib::to_string(res.error()));
        if (res->status != 200) throw Error("deploy to " + l.id + ": HTTP " + std::to_string(res->status) + " " + res->body);
    }
}

}  // namespace relrec
