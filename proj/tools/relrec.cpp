// relrec command-line front end.

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "relrec/corpus.hpp"
#include "relrec/graph.hpp"
#include "relrec/memboost.hpp"
#include "relrec/metrics.hpp"
#include "relrec/pin2vec.hpp"
#include "relrec/ranking.hpp"
#include "relrec/serve.hpp"
#include "relrec/simulator.hpp"
#include "relrec/supplemental.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace relrec;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::vector<double> parse_doubles(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(std::stod(item));
    return out;
}

std::vector<std::string> split(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

json candidate_json(const CandidateEntry& e) {
    return {{"signature", e.signature}, {"source", to_string(e.source)}, {"score", e.generator_score}};
}

std::atomic<bool> g_stop{false};

// Blocks until SIGINT/SIGTERM, then runs `stop`.
void stop_on_signal(const std::function<void()>& stop) {
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    stop();
}

MemboostParams memboost_params(const std::string& beta, double alpha, double gamma, std::size_t insert) {
    MemboostParams p;
    if (!beta.empty()) {
        const auto b = parse_doubles(beta);
        if (b.size() != kNumMbActions) throw Error("--beta needs 4 values (click,long_click,closeup,save)");
        std::copy(b.begin(), b.end(), p.beta.begin());
    }
    p.alpha = alpha;
    p.gamma = gamma;
    p.insert_count = insert;
    return p;
}

// ---------------------------------------------------------------------------
// candidate generation over an ingested dataset

struct CandidateOptions {
    std::string data;
    std::string sources = "walk";
    std::string query;
    std::string out;
    std::uint64_t steps = 100'000;
    double reset = 0.5;
    std::size_t k = 100;
    std::string table;
    std::string locale;
    std::uint64_t seed = 0;
};

class CandidateGenerators {
  public:
    CandidateGenerators(const Dataset& data, const CandidateOptions& opt) : data_(data), opt_(opt) {
        for (const auto& s : split(opt.sources)) sources_.push_back(parse_source(s));
        if (sources_.empty()) throw Error("--source is empty");
        for (Source s : sources_) {
            if ((s == Source::board_cooc || s == Source::walk) && !graph_)
                graph_.emplace(build_graph(data.boards, data.pins, GraphConfig{.seed = opt.seed}));
            if (s == Source::search && !index_) index_.emplace(data.pins);
            if (s == Source::segmented && !segmented_) segmented_.emplace(data.boards, data.pins);
            if (s == Source::pin2vec && !table_) {
                if (opt.table.empty()) throw Error("pin2vec candidates need --table");
                table_.emplace(load_table(opt.table));
            }
        }
    }

    std::vector<CandidateSet> operator()(std::string_view query, std::string_view locale) const {
        std::vector<CandidateSet> out;
        const PinRecord* rec = data_.pins.find(query);
        const std::uint64_t seed = derive_seed(opt_.seed, query);
        for (Source s : sources_) {
            switch (s) {
                case Source::board_cooc:
                    out.push_back(board_cooccurrence(*graph_, data_.pins, query, opt_.k, seed));
                    break;
                case Source::walk:
                    out.push_back(random_walk(*graph_, query,
                                              WalkConfig{opt_.steps, opt_.reset, seed, opt_.k}));
                    break;
                case Source::pin2vec:
                    out.push_back(neighbors(*table_, query, opt_.k));
                    break;
                case Source::search:
                    if (rec) out.push_back(search_candidates(*index_, *rec, opt_.k));
                    break;
                case Source::visual:
                    if (rec) out.push_back(visual_candidates(data_.pins, *rec, opt_.k));
                    break;
                case Source::segmented:
                    out.push_back(segmented_candidates(*segmented_, data_.pins,
                                                       locale.empty() ? kAnyLocale : locale, query, opt_.k, seed));
                    break;
            }
        }
        if (!rec && out.empty()) {
            CandidateSet unknown;
            unknown.query_signature = std::string(query);
            unknown.status = CandidateStatus::unknown_query;
            out.push_back(unknown);
        }
        return out;
    }

  private:
    const Dataset& data_;
    CandidateOptions opt_;
    std::vector<Source> sources_;
    std::optional<BipartiteGraph> graph_;
    std::optional<AnnotationIndex> index_;
    std::optional<SegmentedGraphs> segmented_;
    std::optional<EmbeddingTable> table_;
};

int cmd_candidates(const CandidateOptions& opt) {
    const Dataset data = load_dataset(opt.data);
    const CandidateGenerators gen(data, opt);
    if (!opt.query.empty()) {
        for (const auto& set : gen(opt.query, opt.locale)) {
            if (set.status != CandidateStatus::ok && set.status != CandidateStatus::near_duplicate)
                std::cerr << to_string(set.status) << "\n";
            for (const auto& e : set.entries) std::cout << candidate_json(e).dump() << "\n";
        }
        return 0;
    }
    if (opt.out.empty()) throw Error("give --query or --out");
    CandidateTable table;
    for (const auto& rec : data.pins.records()) table[rec.image_signature] = gen(rec.image_signature, opt.locale);
    write_candidate_table(table, opt.out);
    std::cout << json{{"queries", table.size()}, {"out", opt.out}}.dump() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synthetic data

struct SynthOptions {
    std::string out;
    WorldConfig world;
    std::size_t sessions = 5000;
    std::size_t holdout = 2000;
    std::size_t budget = 50;
    std::size_t list_length = 10;
};

int cmd_synth(const SynthOptions& opt) {
    const auto world = make_world(opt.world);
    const SyntheticUserModel users(world, UserModelConfig::defaults());
    const auto cooc = cooccurrence_candidates(world, opt.budget, opt.world.seed);
    const auto policy = generator_policy(cooc, opt.list_length);

    const auto train_traffic = make_traffic(world, users, opt.sessions, derive_seed(opt.world.seed, "train"), "t", 0);
    const auto train = simulate(policy, train_traffic, world, users);
    std::int64_t last = 0;
    for (const auto& e : train) last = std::max(last, e.timestamp);
    const auto hold_traffic =
        make_traffic(world, users, opt.holdout, derive_seed(opt.world.seed, "holdout"), "h", last + 1);
    const auto holdout = simulate(policy, hold_traffic, world, users);

    const fs::path dir = opt.out;
    fs::create_directories(dir);
    write_pins_jsonl(world.pins, dir / "pins.jsonl");
    write_boards_jsonl(world.boards.boards(), dir / "boards.jsonl");
    write_users_jsonl(world.users, dir / "users.jsonl");
    write_events_jsonl(train, dir / "events.jsonl");
    write_events_jsonl(holdout, dir / "holdout.jsonl");
    std::cout << json{{"pins", world.pins.size()},
                      {"boards", world.boards.size()},
                      {"users", world.users.size()},
                      {"events", train.size()},
                      {"holdout_events", holdout.size()}}
                     .dump()
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// training and evaluation

std::shared_ptr<const MemboostStore> maybe_store(const std::string& path) {
    if (path.empty()) return nullptr;
    return std::make_shared<const MemboostStore>(load_store(path));
}

RankingModel train_on(const EngagementLog& log, const PinCorpus& pins, const MemboostStore* store,
                      const HyperParams& hp) {
    const FeatureSchema schema;
    const Featurizer featurizer(schema, pins, store);
    return train_model(collect_session_data(log, featurizer, session_mode_for(hp), hp.positive_class_weight), hp);
}

std::int64_t max_timestamp(const EngagementLog& log) {
    std::int64_t t = std::numeric_limits<std::int64_t>::min();
    for (const auto& e : log.events()) t = std::max(t, e.timestamp);
    return t;
}

double metric_of(const MetricReport& r, const std::string& name) {
    if (name == "ndcg") return r.ndcg;
    if (name == "pr_auc_save") return r.pr_auc_save;
    if (name == "pr_auc_engaged") return r.pr_auc_engaged;
    if (name == "ppauc_save") return r.precision_position_auc_save;
    if (name == "ppauc_engaged") return r.precision_position_auc_engaged;
    throw Error("unknown metric " + name);
}

// ---------------------------------------------------------------------------
// serving

std::shared_ptr<const PinCorpus> load_pin_dir(const std::string& dir) {
    const fs::path p = dir;
    if (fs::exists(p / "pins.snapshot.json")) return std::make_shared<const PinCorpus>(restore_pins(p / "pins.snapshot.json"));
    return std::make_shared<const PinCorpus>(load_pins(fs::is_directory(p) ? p / "pins.jsonl" : p));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"relrec: related-item recommendation"};
    app.require_subcommand(1);
    std::uint64_t seed = env_seed(0);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "validate JSONL inputs and write a dataset directory");
    std::string in_pins, in_boards, in_events, in_users, in_out;
    ingest->add_option("--pins", in_pins)->required();
    ingest->add_option("--boards", in_boards)->required();
    ingest->add_option("--events", in_events)->required();
    ingest->add_option("--users", in_users);
    ingest->add_option("--out", in_out)->required();

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic world and simulated logs as JSONL");
    SynthOptions so;
    synth->add_option("--out", so.out)->required();
    synth->add_option("--topics", so.world.topics);
    synth->add_option("--pins-per-topic", so.world.pins_per_topic);
    synth->add_option("--boards-per-topic", so.world.boards_per_topic);
    synth->add_option("--users", so.world.users);
    synth->add_option("--sessions", so.sessions);
    synth->add_option("--holdout", so.holdout, "holdout sessions, timestamped after the training log");
    synth->add_option("--seed", seed);

    // candidates
    auto* cand = app.add_subcommand("candidates", "candidate generation over a dataset directory");
    CandidateOptions co;
    cand->add_option("--data", co.data, "directory written by ingest")->required();
    cand->add_option("--source", co.sources, "walk|cooc|pin2vec|search|visual|segmented, comma separated");
    cand->add_option("--query", co.query);
    cand->add_option("--out", co.out, "candidate table for every pin (JSONL)");
    cand->add_option("--steps", co.steps);
    cand->add_option("--reset", co.reset);
    cand->add_option("--k", co.k);
    cand->add_option("--table", co.table, "pin2vec table");
    cand->add_option("--locale", co.locale, "viewer locale for segmented candidates");
    cand->add_option("--seed", seed);

    // pin2vec
    auto* p2v = app.add_subcommand("pin2vec", "session co-save embeddings");
    p2v->require_subcommand(1);
    auto* p2v_train = p2v->add_subcommand("train");
    Pin2VecConfig pc;
    std::string p2v_events, p2v_out;
    p2v_train->add_option("--events", p2v_events)->required();
    p2v_train->add_option("--n", pc.vocab_size);
    p2v_train->add_option("--d", pc.dim);
    p2v_train->add_option("--epochs", pc.epochs);
    p2v_train->add_option("--window", pc.window_seconds);
    p2v_train->add_option("--seed", seed);
    p2v_train->add_option("--out", p2v_out)->required();
    auto* p2v_nn = p2v->add_subcommand("neighbors");
    std::string nn_table, nn_query;
    std::size_t nn_k = 10;
    p2v_nn->add_option("--table", nn_table)->required();
    p2v_nn->add_option("--query", nn_query)->required();
    p2v_nn->add_option("--k", nn_k);

    // memboost
    auto* mb = app.add_subcommand("memboost", "position-normalized engagement store");
    mb->require_subcommand(1);
    auto* mb_build = mb->add_subcommand("build");
    std::string mb_events, mb_out, mb_priors;
    mb_build->add_option("--events", mb_events)->required();
    mb_build->add_option("--out", mb_out)->required();
    mb_build->add_option("--priors-out", mb_priors, "also write the position priors as JSON");
    auto* mb_score_cmd = mb->add_subcommand("score");
    std::string mb_store, mb_query, mb_result, mb_beta;
    double mb_alpha = 1.0;
    mb_score_cmd->add_option("--store", mb_store)->required();
    mb_score_cmd->add_option("--query", mb_query)->required();
    mb_score_cmd->add_option("--result", mb_result)->required();
    mb_score_cmd->add_option("--beta", mb_beta, "click,long_click,closeup,save");
    mb_score_cmd->add_option("--alpha", mb_alpha);

    // train
    auto* train = app.add_subcommand("train", "train a ranking model on engagement logs");
    std::string tr_config, tr_events, tr_data, tr_out, tr_store;
    train->add_option("--config", tr_config, "hyperparameters JSON")->required();
    train->add_option("--events", tr_events)->required();
    train->add_option("--data", tr_data, "dataset directory (pins)")->required();
    train->add_option("--memboost", tr_store, "store for the Memboost features");
    train->add_option("--out", tr_out)->required();

    // tune
    auto* tune_cmd = app.add_subcommand("tune", "random search over hyperparameters");
    std::string tu_space, tu_events, tu_holdout, tu_data, tu_store, tu_out, tu_metric = "ndcg";
    std::size_t tu_trials = 10;
    unsigned tu_parallel = 1;
    tune_cmd->add_option("--space", tu_space)->required();
    tune_cmd->add_option("--trials", tu_trials);
    tune_cmd->add_option("--parallel", tu_parallel);
    tune_cmd->add_option("--events", tu_events)->required();
    tune_cmd->add_option("--holdout", tu_holdout)->required();
    tune_cmd->add_option("--data", tu_data)->required();
    tune_cmd->add_option("--memboost", tu_store);
    tune_cmd->add_option("--metric", tu_metric, "ndcg|pr_auc_save|pr_auc_engaged|ppauc_save|ppauc_engaged");
    tune_cmd->add_option("--out", tu_out, "best hyperparameters JSON");
    tune_cmd->add_option("--seed", seed);

    // eval
    auto* eval = app.add_subcommand("eval", "offline metrics on a holdout log");
    std::string ev_model, ev_holdout, ev_data, ev_store, ev_out;
    std::size_t ev_k = 10;
    eval->add_option("--model", ev_model)->required();
    eval->add_option("--holdout", ev_holdout)->required();
    eval->add_option("--data", ev_data)->required();
    eval->add_option("--memboost", ev_store);
    eval->add_option("--ndcg-k", ev_k);
    eval->add_option("--out", ev_out);

    // simloop
    auto* simloop = app.add_subcommand("simloop", "closed-loop feedback simulation");
    std::string sl_config, sl_out;
    simloop->add_option("--config", sl_config)->required();
    simloop->add_option("--out", sl_out)->required();

    // serve
    auto* serve = app.add_subcommand("serve", "scatter-gather ranking service");
    serve->require_subcommand(1);
    auto* leaf_cmd = serve->add_subcommand("leaf");
    std::string lf_range, lf_pins, lf_model, lf_id = "leaf", lf_host = "127.0.0.1";
    int lf_port = 0;
    leaf_cmd->add_option("--range", lf_range, "A:B in hex")->required();
    leaf_cmd->add_option("--pins", lf_pins, "dataset directory or pins.jsonl")->required();
    leaf_cmd->add_option("--port", lf_port, "0 picks a free port");
    leaf_cmd->add_option("--host", lf_host);
    leaf_cmd->add_option("--model", lf_model);
    leaf_cmd->add_option("--id", lf_id);

    auto* root_cmd = serve->add_subcommand("root");
    std::string rt_shards, rt_model, rt_candidates, rt_pins, rt_store, rt_blend, rt_log, rt_users,
        rt_host = "127.0.0.1";
    int rt_port = 0;
    double rt_gamma = 1.0, rt_unbiased = 0.0;
    std::size_t rt_budget = 200, rt_insert = 3;
    int rt_deadline = 100;
    root_cmd->add_option("--shards", rt_shards)->required();
    root_cmd->add_option("--model", rt_model, "deployed to every leaf at startup");
    root_cmd->add_option("--port", rt_port);
    root_cmd->add_option("--host", rt_host);
    root_cmd->add_option("--candidates", rt_candidates, "precomputed candidate table");
    root_cmd->add_option("--pins", rt_pins, "dataset directory: local swap, and live co-occurrence candidates");
    root_cmd->add_option("--memboost", rt_store);
    root_cmd->add_option("--gamma", rt_gamma);
    root_cmd->add_option("--insert", rt_insert);
    root_cmd->add_option("--blend", rt_blend, "blend policy JSON");
    root_cmd->add_option("--budget", rt_budget);
    root_cmd->add_option("--unbiased", rt_unbiased, "fraction of (user, query) pairs served unranked");
    root_cmd->add_option("--deadline-ms", rt_deadline);
    root_cmd->add_option("--log", rt_log, "append served impressions to this events.jsonl");
    root_cmd->add_option("--users", rt_users, "users.jsonl");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            Dataset d;
            d.pins = load_pins(in_pins);
            d.boards = load_boards(in_boards, d.pins);
            const auto users = in_users.empty() ? std::map<std::string, UserContext>{} : load_users(in_users);
            d.log = load_engagement(in_events, users);
            save_dataset(d, in_out);
            std::cout << json{{"pins", d.pins.size()},
                              {"pins_rejected", d.pins.rejected()},
                              {"boards", d.boards.size()},
                              {"boards_dropped", d.boards.dropped()},
                              {"sessions", d.log.sessions().size()},
                              {"events_rejected", d.log.rejected()}}
                             .dump()
                      << "\n";
            return 0;
        }
        if (*synth) {
            so.world.seed = seed;
            return cmd_synth(so);
        }
        if (*cand) {
            co.seed = seed;
            return cmd_candidates(co);
        }
        if (*p2v_train) {
            pc.seed = seed;
            const auto log = load_engagement(p2v_events);
            const auto vocab = build_vocabulary(log, pc.vocab_size);
            const auto pairs = extract_session_pairs(log, vocab, pc);
            const auto res = train_pin2vec(pairs, vocab, pc);
            save_table(res.table, p2v_out);
            std::cout << json{{"vocab", res.table.size()}, {"pairs", pairs.size()}, {"epoch_loss", res.epoch_loss}}.dump()
                      << "\n";
            return 0;
        }
        if (*p2v_nn) {
            for (const auto& e : neighbors(load_table(nn_table), nn_query, nn_k).entries)
                std::cout << candidate_json(e).dump() << "\n";
            return 0;
        }
        if (*mb_build) {
            const auto log = load_engagement(mb_events);
            const auto priors = compute_priors(log);
            const auto store = accumulate(log, priors);
            save_store(store, mb_out);
            if (!mb_priors.empty()) write_file(mb_priors, priors_to_json(priors));
            std::cout << json{{"pairs", store.size()}}.dump() << "\n";
            return 0;
        }
        if (*mb_score_cmd) {
            const auto store = load_store(mb_store);
            const auto params = memboost_params(mb_beta, mb_alpha, 1.0, 0);
            const MemboostStats* st = store.find(mb_query, mb_result);
            const MemboostStats zero;
            json out = {{"query", mb_query},
                        {"result", mb_result},
                        {"found", st != nullptr},
                        {"mb", relrec::mb_score(st ? *st : zero, params)}};
            if (st) {
                out["counts"] = st->counts;
                out["expected"] = st->expected;
                out["impressions"] = st->impressions;
            }
            std::cout << out.dump() << "\n";
            return 0;
        }
        if (*train) {
            const auto hp = hyper_params_from_json(read_file(tr_config));
            const Dataset data = load_dataset(tr_data);
            const auto log = load_engagement(tr_events, data.log.users());
            const auto store = maybe_store(tr_store);
            auto model = train_on(log, data.pins, store.get(), hp);
            model.metadata["training_max_timestamp"] = std::to_string(max_timestamp(log));
            save_model(model, tr_out);
            std::cout << json{{"out", tr_out}, {"sessions", log.sessions().size()}}.dump() << "\n";
            return 0;
        }
        if (*tune_cmd) {
            const auto space = parse_hyper_space(read_file(tu_space));
            const Dataset data = load_dataset(tu_data);
            const auto log = load_engagement(tu_events, data.log.users());
            const auto holdout = load_engagement(tu_holdout, data.log.users());
            const auto store = maybe_store(tu_store);
            const FeatureSchema schema;
            const Featurizer featurizer(schema, data.pins, store.get());
            const auto cutoff = max_timestamp(log);
            metric_of(MetricReport{}, tu_metric);  // reject unknown names before training
            const auto res = tune(
                space,
                [&](const HyperParams& hp) {
                    const auto model = train_on(log, data.pins, store.get(), hp);
                    return metric_of(offline_eval(model, featurizer, holdout, cutoff), tu_metric);
                },
                tu_trials, tu_parallel, seed);
            const std::string best = hyper_params_to_json(res.best);
            if (!tu_out.empty()) write_file(tu_out, best);
            std::cout << json{{"best_trial", res.best_trial},
                              {"best_score", res.best_score},
                              {"trial_scores", res.trial_scores},
                              {"best", json::parse(best)}}
                             .dump()
                      << "\n";
            return 0;
        }
        if (*eval) {
            const auto model = load_model(ev_model);
            const Dataset data = load_dataset(ev_data);
            const auto holdout = load_engagement(ev_holdout, data.log.users());
            const auto store = maybe_store(ev_store);
            const FeatureSchema schema;
            const Featurizer featurizer(schema, data.pins, store.get());
            std::optional<std::int64_t> cutoff;
            if (auto it = model.metadata.find("training_max_timestamp"); it != model.metadata.end())
                cutoff = std::stoll(it->second);
            const std::string report = report_to_json(offline_eval(model, featurizer, holdout, cutoff, ev_k));
            if (!ev_out.empty()) write_file(ev_out, report);
            std::cout << report << "\n";
            return 0;
        }
        if (*simloop) {
            auto cfg = parse_loop_config(read_file(sl_config));
            if (std::getenv("RELREC_SEED")) cfg.seed = env_seed(cfg.seed);
            const auto rows = compare_loop_regimes(cfg);
            write_file(sl_out, generations_csv(rows));
            std::cout << generations_csv(rows);
            return 0;
        }
        if (*leaf_cmd) {
            const auto pins = load_pin_dir(lf_pins);
            std::shared_ptr<const RankingModel> model;
            if (!lf_model.empty()) model = std::make_shared<const RankingModel>(load_model(lf_model));
            auto leaf = std::make_shared<Leaf>(lf_id, parse_range(lf_range), pins, model);
            LeafServer server(leaf);
            const int port = server.bind(lf_host, lf_port);
            std::cout << "listening on " << lf_host << ":" << port << std::endl;
            std::thread t([&] { server.listen(); });
            stop_on_signal([&] { server.stop(); });
            t.join();
            return 0;
        }
        if (*root_cmd) {
            const auto shards = parse_shard_map(read_file(rt_shards));
            if (!rt_model.empty()) deploy_model(shards, load_model(rt_model));

            PipelineState state;
            state.config.seed = seed;
            state.config.candidate_budget = rt_budget;
            state.config.deadline_ms = rt_deadline;
            state.config.unbiased_fraction = rt_unbiased;
            state.config.memboost.gamma = rt_gamma;
            state.config.memboost.insert_count = rt_insert;
            if (!rt_blend.empty()) state.config.blend = load_blend_policy(rt_blend);
            state.store = maybe_store(rt_store);

            std::shared_ptr<const Dataset> data;
            if (!rt_pins.empty()) {
                data = std::make_shared<const Dataset>(load_dataset(rt_pins));
                state.pins = std::shared_ptr<const PinCorpus>(data, &data->pins);
            }
            if (!rt_candidates.empty()) {
                state.candidates = table_source(std::make_shared<const CandidateTable>(load_candidate_table(rt_candidates)));
            } else if (data) {
                CandidateOptions opt;
                opt.sources = "cooc";
                opt.k = rt_budget;
                opt.seed = seed;
                auto gen = std::make_shared<const CandidateGenerators>(*data, opt);
                state.candidates = [gen, data](std::string_view q, const UserContext& u) {
                    return (*gen)(q, u.language);
                };
            } else {
                throw Error("serve root needs --candidates or --pins");
            }

            std::vector<std::shared_ptr<LeafClient>> clients;
            for (const auto& l : shards.leaves()) {
                if (l.url.empty()) throw Error("shard " + l.id + " has no url");
                clients.push_back(http_leaf_client(l.url));
            }
            auto root = std::make_shared<Root>(shards, std::move(clients), state);
            if (!rt_log.empty()) root->set_log_sink(file_log_sink(rt_log));
            auto users = rt_users.empty() ? std::map<std::string, UserContext>{} : load_users(rt_users);
            RootServer server(root, std::move(users));
            const int port = server.bind(rt_host, rt_port);
            std::cout << "listening on " << rt_host << ":" << port << std::endl;
            std::thread t([&] { server.listen(); });
            stop_on_signal([&] { server.stop(); });
            t.join();
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
