#include "relrec/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "relrec/graph.hpp"

namespace relrec {

using json = nlohmann::json;

namespace {

std::vector<double> unit_vector(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    const double n = l2_norm(v);
    for (auto& x : v) x /= n;
    return v;
}

std::size_t pick_weighted(Rng& rng, const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (u < weights[i]) return i;
        u -= weights[i];
    }
    return weights.size() - 1;
}

std::string country_for(const std::string& language, Rng& rng) {
    if (language == "en") return rng.bernoulli(0.7) ? "US" : "GB";
    if (language == "fr") return "FR";
    if (language == "de") return "DE";
    if (language == "pt") return "BR";
    if (language == "ja") return "JP";
    std::string up = language;
    for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return up;
}

std::string two_digits(std::size_t i) { return (i < 10 ? "0" : "") + std::to_string(i); }

}  // namespace

// ---------------------------------------------------------------------------
// world

SyntheticWorld make_world(const WorldConfig& cfg) {
    if (cfg.topics == 0 || cfg.pins_per_topic == 0 || cfg.pins_per_board == 0)
        throw std::invalid_argument("make_world: empty world");
    if (cfg.locales.empty() || cfg.locales.size() != cfg.locale_weights.size())
        throw std::invalid_argument("make_world: locales and locale_weights must match");

    SyntheticWorld w;
    w.config = cfg;
    Rng rng(derive_seed(cfg.seed, "world"));

    std::vector<std::vector<double>> ann_centroid, vis_centroid;
    for (std::size_t t = 0; t < cfg.topics; ++t) {
        ann_centroid.push_back(unit_vector(rng, cfg.annotation_dim));
        vis_centroid.push_back(unit_vector(rng, cfg.visual_dim));
    }

    PinCorpusBuilder builder;
    std::vector<std::vector<std::string>> topic_pins(cfg.topics);
    for (std::size_t t = 0; t < cfg.topics; ++t) {
        for (std::size_t j = 0; j < cfg.pins_per_topic; ++j) {
            PinRecord p;
            p.image_signature = "t" + two_digits(t) + "p" + std::to_string(j);
            const std::size_t primary = pick_weighted(rng, cfg.locale_weights);
            p.locale = cfg.locales[primary];
            p.instances.push_back({p.image_signature + "-" + p.locale, p.locale});
            if (cfg.locales.size() > 1 && rng.bernoulli(cfg.second_locale_rate)) {
                std::size_t other = rng.below(cfg.locales.size() - 1);
                if (other >= primary) ++other;
                p.instances.push_back({p.image_signature + "-" + cfg.locales[other], cfg.locales[other]});
            }

            p.annotations.push_back("topic" + std::to_string(t));
            for (int k = 0; k < 2; ++k) p.annotations.push_back("t" + std::to_string(t) + "w" + std::to_string(rng.below(8)));
            p.annotations.push_back("w" + std::to_string(rng.below(30)));

            p.category_vector.assign(cfg.topics, 0.0);
            const double main = cfg.topics == 1 ? 1.0 : 0.6 + 0.3 * rng.uniform();
            p.category_vector[t] = main;
            if (cfg.topics > 1) {
                std::size_t a = rng.below(cfg.topics), b = rng.below(cfg.topics);
                const double split = rng.uniform();
                p.category_vector[a] += (1.0 - main) * split;
                p.category_vector[b] += (1.0 - main) * (1.0 - split);
                double sum = 0.0;
                for (double x : p.category_vector) sum += x;
                for (double& x : p.category_vector) x /= sum;
            }

            p.annotation_embedding = ann_centroid[t];
            for (auto& x : p.annotation_embedding) x += 0.5 * rng.normal() / std::sqrt(double(cfg.annotation_dim));
            const double n = l2_norm(p.annotation_embedding);
            for (auto& x : p.annotation_embedding) x /= n;
            p.visual_embedding = vis_centroid[t];
            for (auto& x : p.visual_embedding) x = 3.0 * x + rng.normal();

            const double quality = 0.1 + 0.9 * rng.uniform();
            p.popularity = static_cast<std::uint64_t>(std::llround(100.0 * quality * quality * std::exp(0.5 * rng.normal())));
            w.truth[p.image_signature] = {t, quality};
            topic_pins[t].push_back(p.image_signature);
            if (!builder.add(std::move(p))) throw Error("make_world: generated an invalid pin");
        }
    }
    w.pins = std::move(builder).build();

    std::vector<Board> boards;
    for (std::size_t t = 0; t < cfg.topics; ++t) {
        for (std::size_t b = 0; b < cfg.boards_per_topic; ++b) {
            Board board;
            board.board_id = "b" + two_digits(t) + "-" + std::to_string(b);
            board.locale = cfg.locales[pick_weighted(rng, cfg.locale_weights)];
            board.title_tokens = {"topic" + std::to_string(t)};
            std::set<std::string> chosen;
            for (std::size_t slot = 0; slot < cfg.pins_per_board * 3 && chosen.size() < cfg.pins_per_board; ++slot) {
                const std::size_t topic = rng.bernoulli(cfg.off_topic_rate) ? rng.below(cfg.topics) : t;
                const auto& pool = topic_pins[topic];
                std::string sig = pool[rng.below(pool.size())];
                // boards mostly collect pins readable in their own locale
                if (w.pins.at(sig).instance_in_locale(board.locale) == nullptr && rng.bernoulli(0.7)) continue;
                chosen.insert(sig);
            }
            if (chosen.empty()) chosen.insert(topic_pins[t][rng.below(topic_pins[t].size())]);
            board.pin_signatures.assign(chosen.begin(), chosen.end());
            rng.shuffle(board.pin_signatures);
            boards.push_back(std::move(board));
        }
    }
    w.boards = BoardCorpus::from_boards(std::move(boards), w.pins);

    std::set<std::string> on_boards;
    for (const auto& b : w.boards.boards()) on_boards.insert(b.pin_signatures.begin(), b.pin_signatures.end());
    w.queries.assign(on_boards.begin(), on_boards.end());

    for (std::size_t i = 0; i < cfg.users; ++i) {
        UserContext u;
        u.language = cfg.locales[pick_weighted(rng, cfg.locale_weights)];
        u.country = country_for(u.language, rng);
        const double g = rng.uniform();
        u.gender = g < 0.45 ? "female" : g < 0.9 ? "male" : "unspecified";
        u.long_term_category_vector.assign(cfg.topics, cfg.topics > 1 ? 0.5 / double(cfg.topics - 1) : 0.0);
        u.long_term_category_vector[rng.below(cfg.topics)] = cfg.topics > 1 ? 0.5 : 1.0;
        std::string id = "u" + std::to_string(i);
        w.user_ids.push_back(id);
        w.users.emplace(std::move(id), std::move(u));
    }
    return w;
}

// ---------------------------------------------------------------------------
// user model

UserModelConfig UserModelConfig::defaults() {
    UserModelConfig c;
    auto curve = [](double top, double decay) {
        std::vector<double> v;
        for (int k = 0; k < 30; ++k) v.push_back(top * std::pow(decay, k));
        return v;
    };
    c.examination["web"] = curve(0.95, 0.78);
    c.examination["ios"] = curve(0.9, 0.74);
    c.examination["android"] = curve(0.85, 0.76);
    return c;
}

SyntheticUserModel::SyntheticUserModel(const SyntheticWorld& world, UserModelConfig cfg)
    : world_(&world), cfg_(std::move(cfg)) {
    if (cfg_.examination.empty()) throw std::invalid_argument("user model: no platforms");
    for (const auto& [platform, curve] : cfg_.examination) {
        if (curve.empty()) throw std::invalid_argument("user model: empty curve for " + platform);
        for (std::size_t k = 0; k < curve.size(); ++k) {
            if (!(curve[k] >= 0.0 && curve[k] <= 1.0))
                throw std::invalid_argument("user model: examination outside [0, 1] for " + platform);
            if (k > 0 && curve[k] > curve[k - 1])
                throw std::invalid_argument("user model: examination must be non-increasing in rank for " + platform);
        }
    }
    for (double p : {cfg_.closeup, cfg_.click, cfg_.long_click, cfg_.save, cfg_.nonlocal_factor,
                     cfg_.cross_topic_affinity}) {
        if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("user model: probabilities must lie in [0, 1]");
    }
}

std::vector<std::string> SyntheticUserModel::platforms() const {
    std::vector<std::string> out;
    for (const auto& [p, _] : cfg_.examination) out.push_back(p);
    return out;
}

double SyntheticUserModel::examination(std::string_view platform, int rank) const {
    auto it = cfg_.examination.find(std::string(platform));
    if (it == cfg_.examination.end()) return 0.0;
    const auto& curve = it->second;
    return curve[std::min<std::size_t>(static_cast<std::size_t>(std::max(rank, 0)), curve.size() - 1)];
}

double SyntheticUserModel::relevance(const UserContext& user, std::string_view query, std::string_view candidate) const {
    auto q = world_->truth.find(std::string(query));
    auto c = world_->truth.find(std::string(candidate));
    if (q == world_->truth.end() || c == world_->truth.end()) return 0.0;
    const double affinity = q->second.topic == c->second.topic ? 1.0 : cfg_.cross_topic_affinity;
    double interest = 1.0;
    const auto& pref = user.long_term_category_vector;
    if (c->second.topic < pref.size()) {
        const double top = *std::max_element(pref.begin(), pref.end());
        if (top > 0.0) interest = 0.6 + 0.4 * pref[c->second.topic] / top;
    }
    double local = 1.0;
    if (!user.language.empty()) {
        const PinRecord* rec = world_->pins.find(candidate);
        if (rec != nullptr && rec->instance_in_locale(user.language) == nullptr) local = cfg_.nonlocal_factor;
    }
    return affinity * c->second.quality * interest * local;
}

std::array<double, kNumMbActions> SyntheticUserModel::action_probabilities(double r) const {
    const double closeup = cfg_.closeup * r;
    const double click = closeup * cfg_.click * r;
    std::array<double, kNumMbActions> p{};
    p[static_cast<int>(MbAction::closeup)] = closeup;
    p[static_cast<int>(MbAction::click)] = click;
    p[static_cast<int>(MbAction::long_click)] = click * cfg_.long_click;
    p[static_cast<int>(MbAction::save)] = closeup * cfg_.save * r;
    return p;
}

// ---------------------------------------------------------------------------
// sessions

std::vector<SimRequest> make_traffic(const SyntheticWorld& world, const SyntheticUserModel& users, std::size_t sessions,
                                     std::uint64_t seed, std::string_view id_prefix, std::int64_t start_timestamp) {
    if (world.queries.empty() || world.user_ids.empty()) throw std::invalid_argument("make_traffic: empty world");
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& q : world.queries) {
        total += static_cast<double>(world.pins.at(q).popularity + 1);
        cumulative.push_back(total);
    }
    const auto platforms = users.platforms();
    Rng rng(derive_seed(seed, "traffic"));
    std::vector<SimRequest> out;
    out.reserve(sessions);
    for (std::size_t i = 0; i < sessions; ++i) {
        SimRequest r;
        r.session_id = std::string(id_prefix) + "-" + std::to_string(i);
        r.user_id = world.user_ids[rng.below(world.user_ids.size())];
        const double u = rng.uniform() * total;
        const auto qi = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        r.query = world.queries[std::min(qi, world.queries.size() - 1)];
        r.platform = platforms[rng.below(platforms.size())];
        r.timestamp = start_timestamp + static_cast<std::int64_t>(i) * 60;
        r.seed = derive_seed(seed, r.session_id);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<EngagementEvent> simulate_session(const SyntheticUserModel& users, const UserContext& user,
                                              const SimRequest& request, const ServedList& served) {
    const auto& cfg = users.config();
    Rng rng(request.seed);
    std::vector<EngagementEvent> out;
    for (std::size_t i = 0; i < served.items.size(); ++i) {
        const auto& item = served.items[i];
        EngagementEvent e;
        e.query_signature = request.query;
        e.result_signature = item.signature;
        e.platform = request.platform;
        e.rank = static_cast<int>(i);
        e.user_id = request.user_id;
        e.timestamp = request.timestamp;
        e.session_id = request.session_id;
        e.source = item.source;
        e.generator_score = item.generator_score;
        e.tag = served.tag;
        out.push_back(e);
        e.source.reset();
        e.generator_score = 0.0;

        // a fixed number of draws per item keeps later items independent of earlier outcomes
        const double u_exam = rng.uniform(), u_close = rng.uniform(), u_click = rng.uniform(),
                     u_long = rng.uniform(), u_save = rng.uniform();
        if (u_exam >= users.examination(request.platform, e.rank)) continue;
        const double r = users.relevance(user, request.query, item.signature);
        if (u_close >= cfg.closeup * r) continue;
        e.action = Action::closeup;
        out.push_back(e);
        if (u_click < cfg.click * r) {
            e.action = Action::click;
            out.push_back(e);
            if (u_long < cfg.long_click) {
                e.action = Action::long_click;
                out.push_back(e);
            }
        }
        if (u_save < cfg.save * r) {
            e.action = Action::save;
            out.push_back(e);
        }
    }
    return out;
}

std::vector<EngagementEvent> simulate(const Policy& policy, std::span<const SimRequest> requests,
                                      const SyntheticWorld& world, const SyntheticUserModel& users,
                                      unsigned parallelism) {
    std::vector<std::vector<EngagementEvent>> per_session(requests.size());
    static const UserContext kNoUser;
    parallel_for(requests.size(), parallelism, [&](std::size_t i) {
        const auto& req = requests[i];
        auto it = world.users.find(req.user_id);
        const UserContext& user = it == world.users.end() ? kNoUser : it->second;
        per_session[i] = simulate_session(users, user, req, policy(req, user));
    });
    std::vector<EngagementEvent> out;
    for (auto& s : per_session) std::move(s.begin(), s.end(), std::back_inserter(out));
    return out;
}

// ---------------------------------------------------------------------------
// policies

CandidateFn cooccurrence_candidates(const SyntheticWorld& world, std::size_t budget, std::uint64_t seed) {
    auto cache = std::make_shared<std::unordered_map<std::string, CandidateSet>>();
    const auto graph = build_graph(world.boards, world.pins);
    for (const auto& q : world.queries) {
        auto set = board_cooccurrence(graph, world.pins, q, budget, derive_seed(seed, q));
        sort_by_score(set.entries);
        cache->emplace(q, std::move(set));
    }
    return [cache](std::string_view query, const UserContext&) {
        auto it = cache->find(std::string(query));
        if (it != cache->end()) return it->second;
        CandidateSet none;
        none.query_signature = std::string(query);
        none.status = CandidateStatus::unknown_query;
        return none;
    };
}

namespace {

ServedItem to_item(const CandidateEntry& e) { return {e.signature, e.source, e.generator_score}; }

}  // namespace

Policy generator_policy(CandidateFn candidates, std::size_t list_length) {
    return [candidates = std::move(candidates), list_length](const SimRequest& req, const UserContext& user) {
        auto set = candidates(req.query, user);
        sort_by_score(set.entries);
        ServedList out;
        for (std::size_t i = 0; i < set.entries.size() && i < list_length; ++i) out.items.push_back(to_item(set.entries[i]));
        return out;
    };
}

Policy randomized_policy(CandidateFn candidates, std::size_t list_length) {
    return [candidates = std::move(candidates), list_length](const SimRequest& req, const UserContext& user) {
        auto set = candidates(req.query, user);
        Rng rng(derive_seed(req.seed, "unbiased"));
        rng.shuffle(set.entries);
        ServedList out;
        out.tag = "unbiased";
        for (std::size_t i = 0; i < set.entries.size() && i < list_length; ++i) out.items.push_back(to_item(set.entries[i]));
        return out;
    };
}

Policy model_policy(RankingModel model, const PinCorpus& pins, CandidateFn candidates, std::size_t list_length,
                    MemboostUse memboost) {
    struct State {
        RankingModel model;
        FeatureSchema schema;
        MemboostUse memboost;
        std::unique_ptr<Featurizer> featurizer;
    };
    auto st = std::make_shared<State>();
    st->model = std::move(model);
    st->memboost = std::move(memboost);
    const MemboostStore* feature_store = st->memboost.features ? st->memboost.store.get() : nullptr;
    st->featurizer = std::make_unique<Featurizer>(st->schema, pins, feature_store, st->memboost.params.alpha);
    return [st, candidates = std::move(candidates), list_length](const SimRequest& req, const UserContext& user) {
        auto set = candidates(req.query, user);
        auto ranked = rank(st->model, *st->featurizer, req.query, user, set.entries);
        if (st->memboost.boost && st->memboost.store) {
            apply_memboost(ranked, req.query, *st->memboost.store, st->memboost.params);
        }
        ServedList out;
        for (std::size_t i = 0; i < ranked.size() && i < list_length; ++i) {
            out.items.push_back({ranked[i].signature, ranked[i].source, ranked[i].generator_score});
        }
        return out;
    };
}

bool unbiased_gate(std::string_view user, std::string_view query, double fraction, std::uint64_t salt) {
    const std::uint64_t h = derive_seed(salt, stable_hash64(user) ^ mix64(stable_hash64(query) + 1));
    return unit_interval(h) < fraction;
}

Policy gated_policy(Policy ranked, Policy randomized, double fraction, std::uint64_t salt) {
    return [ranked = std::move(ranked), randomized = std::move(randomized), fraction, salt](const SimRequest& req,
                                                                                             const UserContext& user) {
        return unbiased_gate(req.user_id, req.query, fraction, salt) ? randomized(req, user) : ranked(req, user);
    };
}

// ---------------------------------------------------------------------------
// experiments

ArmStats save_propensity(std::span<const EngagementEvent> events, std::string_view exclude_tag) {
    std::unordered_set<std::string> seen, saved;
    for (const auto& e : events) {
        if (!exclude_tag.empty() && e.tag == exclude_tag) continue;
        if (e.action == Action::impression) seen.insert(e.user_id);
        else if (e.action == Action::save) saved.insert(e.user_id);
    }
    ArmStats s;
    s.users_seen = seen.size();
    s.users_saved = saved.size();
    s.propensity = s.users_seen == 0 ? 0.0 : static_cast<double>(s.users_saved) / static_cast<double>(s.users_seen);
    return s;
}

AbResult run_ab(const Policy& control, const Policy& treatment, const SyntheticWorld& world,
                const SyntheticUserModel& users, const AbConfig& cfg) {
    if (!(cfg.treatment_share > 0.0 && cfg.treatment_share < 1.0))
        throw std::invalid_argument("run_ab: treatment_share must lie in (0, 1)");
    const std::uint64_t split_salt = derive_seed(cfg.seed, "split");
    auto in_treatment = [&](const std::string& user) {
        return unit_interval(derive_seed(split_salt, user)) < cfg.treatment_share;
    };
    Policy routed = [&](const SimRequest& req, const UserContext& user) {
        const bool t = in_treatment(req.user_id);
        ServedList list = t ? treatment(req, user) : control(req, user);
        const std::string arm = t ? "treatment" : "control";
        list.tag = list.tag.empty() ? arm : arm + ":" + list.tag;
        return list;
    };
    const auto traffic = make_traffic(world, users, cfg.sessions, derive_seed(cfg.seed, "ab"), "ab",
                                      cfg.start_timestamp);
    AbResult res;
    res.events = simulate(routed, traffic, world, users, cfg.parallelism);

    std::map<std::string, bool> control_users, treatment_users;
    for (const auto& e : res.events) {
        auto& arm = in_treatment(e.user_id) ? treatment_users : control_users;
        if (e.action == Action::impression) arm.emplace(e.user_id, false);
        else if (e.action == Action::save) arm[e.user_id] = true;
    }
    auto stats = [](const std::map<std::string, bool>& m) {
        ArmStats s;
        s.users_seen = m.size();
        for (const auto& [_, saved] : m) s.users_saved += saved;
        s.propensity = s.users_seen == 0 ? 0.0 : double(s.users_saved) / double(s.users_seen);
        return s;
    };
    res.control = stats(control_users);
    res.treatment = stats(treatment_users);
    res.difference = res.treatment.propensity - res.control.propensity;

    auto flags = [](const std::map<std::string, bool>& m) {
        std::vector<char> v;
        for (const auto& [_, saved] : m) v.push_back(saved);
        return v;
    };
    const auto cf = flags(control_users), tf = flags(treatment_users);
    if (cfg.bootstrap == 0 || cf.empty() || tf.empty()) {
        res.ci_low = res.ci_high = res.difference;
        return res;
    }
    Rng rng(derive_seed(cfg.seed, "bootstrap"));
    auto resample_mean = [&](const std::vector<char>& v) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < v.size(); ++i) hits += v[rng.below(v.size())];
        return static_cast<double>(hits) / static_cast<double>(v.size());
    };
    std::vector<double> diffs(cfg.bootstrap);
    for (auto& d : diffs) {
        const double c = resample_mean(cf);
        d = resample_mean(tf) - c;
    }
    std::sort(diffs.begin(), diffs.end());
    const double last = static_cast<double>(diffs.size() - 1);
    res.ci_low = diffs[static_cast<std::size_t>(std::floor(0.025 * last))];
    res.ci_high = diffs[static_cast<std::size_t>(std::ceil(0.975 * last))];
    return res;
}

// ---------------------------------------------------------------------------
// feedback loop

LoopConfig parse_loop_config(std::string_view json_text) {
    LoopConfig c;
    try {
        auto j = json::parse(json_text);
        for (const auto& [key, v] : j.items()) {
            if (key == "generations") c.generations = v.get<std::size_t>();
            else if (key == "sessions_per_generation") c.sessions_per_generation = v.get<std::size_t>();
            else if (key == "unbiased_fraction") c.unbiased_fraction = v.get<double>();
            else if (key == "train_on_unbiased_only") c.train_on_unbiased_only = v.get<bool>();
            else if (key == "candidate_budget") c.candidate_budget = v.get<std::size_t>();
            else if (key == "list_length") c.list_length = v.get<std::size_t>();
            else if (key == "memboost_features") c.memboost_features = v.get<bool>();
            else if (key == "memboost_boost") c.memboost_boost = v.get<bool>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "parallelism") c.parallelism = v.get<unsigned>();
            else if (key == "training") c.training = hyper_params_from_json(v.dump());
            else if (key == "world") {
                auto& w = c.world;
                for (const auto& [wk, wv] : v.items()) {
                    if (wk == "topics") w.topics = wv.get<std::size_t>();
                    else if (wk == "pins_per_topic") w.pins_per_topic = wv.get<std::size_t>();
                    else if (wk == "boards_per_topic") w.boards_per_topic = wv.get<std::size_t>();
                    else if (wk == "pins_per_board") w.pins_per_board = wv.get<std::size_t>();
                    else if (wk == "off_topic_rate") w.off_topic_rate = wv.get<double>();
                    else if (wk == "locales") w.locales = wv.get<std::vector<std::string>>();
                    else if (wk == "locale_weights") w.locale_weights = wv.get<std::vector<double>>();
                    else if (wk == "second_locale_rate") w.second_locale_rate = wv.get<double>();
                    else if (wk == "users") w.users = wv.get<std::size_t>();
                    else if (wk == "seed") w.seed = wv.get<std::uint64_t>();
                    else throw Error("unknown world key: " + wk);
                }
            } else if (key == "user_model") {
                auto& u = c.user_model;
                for (const auto& [uk, uv] : v.items()) {
                    if (uk == "examination") u.examination = uv.get<std::map<std::string, std::vector<double>>>();
                    else if (uk == "closeup") u.closeup = uv.get<double>();
                    else if (uk == "click") u.click = uv.get<double>();
                    else if (uk == "long_click") u.long_click = uv.get<double>();
                    else if (uk == "save") u.save = uv.get<double>();
                    else if (uk == "nonlocal_factor") u.nonlocal_factor = uv.get<double>();
                    else if (uk == "cross_topic_affinity") u.cross_topic_affinity = uv.get<double>();
                    else throw Error("unknown user_model key: " + uk);
                }
            } else {
                throw Error("unknown loop config key: " + key);
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad loop config: ") + e.what());
    }
    if (!(c.unbiased_fraction >= 0.0 && c.unbiased_fraction <= 1.0)) throw Error("unbiased_fraction must lie in [0, 1]");
    return c;
}

std::string_view to_string(LoopRegime r) { return r == LoopRegime::biased ? "biased" : "unbiased"; }

std::vector<GenerationReport> run_feedback_loop(const LoopConfig& cfg, const SyntheticWorld& world,
                                                const SyntheticUserModel& users, const CandidateFn& candidates,
                                                LoopRegime regime) {
    const FeatureSchema schema;
    const auto randomized = randomized_policy(candidates, cfg.list_length);
    const std::uint64_t gate_salt = derive_seed(cfg.seed, "gate");
    const SessionMode mode = session_mode_for(cfg.training);

    std::optional<RankingModel> model;
    std::shared_ptr<const MemboostStore> store;
    std::vector<EngagementEvent> history;
    std::vector<GenerationReport> out;
    // every generation replays the same users, queries and platforms with
    // fresh engagement draws
    const auto base_traffic = make_traffic(world, users, cfg.sessions_per_generation, derive_seed(cfg.seed, "traffic"),
                                           "s", 0);
    std::unordered_set<std::string> gated;
    for (const auto& r : base_traffic) {
        if (unbiased_gate(r.user_id, r.query, cfg.unbiased_fraction, gate_salt)) gated.insert(r.session_id);
    }
    const bool explore = regime == LoopRegime::unbiased && cfg.unbiased_fraction > 0.0;
    for (std::size_t g = 0; g < cfg.generations; ++g) {
        Policy ranked = model ? model_policy(*model, world.pins, candidates, cfg.list_length,
                                             {store, cfg.memboost_params, cfg.memboost_features, cfg.memboost_boost})
                              : generator_policy(candidates, cfg.list_length);
        Policy policy = explore ? gated_policy(ranked, randomized, cfg.unbiased_fraction, gate_salt) : ranked;
        auto traffic = base_traffic;
        for (auto& r : traffic) {
            r.session_id = "g" + std::to_string(g) + "-" + r.session_id;
            r.timestamp += static_cast<std::int64_t>(g) * 100'000'000;
            r.seed = derive_seed(r.seed, static_cast<std::uint64_t>(g));
        }
        auto events = simulate(policy, traffic, world, users, cfg.parallelism);

        GenerationReport rep;
        rep.generation = g;
        rep.regime = std::string(to_string(regime));
        rep.sessions = traffic.size();
        const std::string prefix = "g" + std::to_string(g) + "-";
        std::vector<EngagementEvent> measured;
        for (const auto& e : events) {
            if (!gated.count(e.session_id.substr(prefix.size()))) measured.push_back(e);
        }
        rep.save_propensity = save_propensity(measured).propensity;

        std::vector<EngagementEvent> train_events;
        if (explore && cfg.train_on_unbiased_only) {
            for (const auto& e : events) {
                if (e.tag == "unbiased") train_events.push_back(e);
            }
        } else {
            train_events = events;
        }
        const auto log = EngagementLog::from_events(std::move(train_events), world.users);
        Featurizer featurizer(schema, world.pins, cfg.memboost_features ? store.get() : nullptr,
                              cfg.memboost_params.alpha);
        auto data = collect_session_data(log, featurizer, mode, cfg.training.positive_class_weight);
        rep.training_rows = data.rows.size();
        double rank_sum = 0.0;
        for (const auto& r : data.rows) rank_sum += r.rank_shown;
        rep.mean_rank_shown = data.rows.empty() ? 0.0 : rank_sum / static_cast<double>(data.rows.size());
        out.push_back(rep);

        const bool last = g + 1 == cfg.generations;
        const bool has_positive = std::any_of(data.rows.begin(), data.rows.end(), [](const auto& r) { return r.label > 0.5; });
        if (!last && (mode == SessionMode::pointwise ? has_positive : !data.pairs.empty())) {
            HyperParams hp = cfg.training;
            hp.gbdt.seed = derive_seed(cfg.seed, "train" + std::to_string(g));
            hp.linear.seed = hp.gbdt.seed;
            model = train_model(data, hp);
        }
        if (!last && (cfg.memboost_features || cfg.memboost_boost)) {
            history.insert(history.end(), events.begin(), events.end());
            const auto all = EngagementLog::from_events(history, world.users);
            store = std::make_shared<MemboostStore>(accumulate(all, compute_priors(all)));
        }
    }
    return out;
}

std::vector<GenerationReport> compare_loop_regimes(const LoopConfig& cfg) {
    const auto world = make_world(cfg.world);
    const SyntheticUserModel users(world, cfg.user_model);
    const auto candidates = cooccurrence_candidates(world, cfg.candidate_budget, derive_seed(cfg.seed, "candidates"));
    auto rows = run_feedback_loop(cfg, world, users, candidates, LoopRegime::biased);
    auto unbiased = run_feedback_loop(cfg, world, users, candidates, LoopRegime::unbiased);
    rows.insert(rows.end(), unbiased.begin(), unbiased.end());
    return rows;
}

std::string generations_csv(std::span<const GenerationReport> rows) {
    std::ostringstream os;
    os.precision(17);
    os << "generation,regime,save_propensity,mean_rank_shown\n";
    for (const auto& r : rows) {
        os << r.generation << ',' << r.regime << ',' << r.save_propensity << ',' << r.mean_rank_shown << '\n';
    }
    return os.str();
}

}  // namespace relrec
