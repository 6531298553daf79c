#include "doctest.h"
#include "fixtures.hpp"

#include <set>
#include <thread>

#include "httplib.h"
#include "relrec/serve.hpp"
#include "relrec/simulator.hpp"

using namespace relrec;
using namespace relrec::testing;

namespace {

struct ServeWorld {
    SyntheticWorld world;
    std::shared_ptr<const PinCorpus> pins;
    std::shared_ptr<const RankingModel> model;
    std::shared_ptr<const MemboostStore> store;
    CandidateSource source;

    explicit ServeWorld(std::uint64_t seed = 1) {
        WorldConfig wc;
        wc.topics = 4;
        wc.pins_per_topic = 40;
        wc.boards_per_topic = 25;
        wc.users = 300;
        wc.seed = seed;
        world = make_world(wc);
        pins = std::make_shared<const PinCorpus>(world.pins);

        const SyntheticUserModel users(world, UserModelConfig::defaults());
        auto cooc = cooccurrence_candidates(world, 60, seed);
        const auto traffic = make_traffic(world, users, 1500, seed, "w", 0);
        const auto events = simulate(generator_policy(cooc, 10), traffic, world, users);
        const auto log = EngagementLog::from_events(events, world.users);
        store = std::make_shared<const MemboostStore>(accumulate(log, compute_priors(log)));

        const FeatureSchema schema;
        const Featurizer featurizer(schema, world.pins, store.get());
        HyperParams hp;
        hp.gbdt.num_trees = 15;
        model = std::make_shared<const RankingModel>(
            train_model(collect_session_data(log, featurizer, SessionMode::pointwise), hp));

        auto p = pins;
        source = [cooc, p](std::string_view q, const UserContext& u) {
            std::vector<CandidateSet> sets{cooc(q, u)};
            if (const PinRecord* rec = p->find(q)) sets.push_back(visual_candidates(*p, *rec, 20));
            return sets;
        };
    }

    PipelineState state(PipelineConfig cfg = {}) const {
        const std::array<Source, 2> sources = {Source::board_cooc, Source::visual};
        cfg.blend = BlendPolicy::uniform(sources);
        cfg.deadline_ms = 5000;
        return {source, pins, store, cfg};
    }

    std::vector<std::shared_ptr<const Leaf>> leaves(const ShardMap& map) const {
        std::vector<std::shared_ptr<const Leaf>> out;
        for (const auto& l : map.leaves()) out.push_back(std::make_shared<const Leaf>(l.id, l.range, pins, model));
        return out;
    }

    Root root(const ShardMap& map, PipelineConfig cfg = {}) const {
        std::vector<std::shared_ptr<LeafClient>> clients;
        for (auto& leaf : leaves(map)) clients.push_back(local_leaf_client(leaf));
        return Root(map, std::move(clients), state(cfg));
    }

    RelatedRequest request(std::size_t i, std::size_t k = 10) const {
        RelatedRequest r;
        r.query = world.queries[i % world.queries.size()];
        r.user_id = world.user_ids[(i * 7) % world.user_ids.size()];
        r.user = world.users.at(r.user_id);
        r.top_k = k;
        r.session_id = "s" + std::to_string(i);
        r.timestamp = static_cast<std::int64_t>(i);
        return r;
    }
};

const ServeWorld& shared_world() {
    static const ServeWorld w;
    return w;
}

void check_same(const RelatedResponse& a, const RelatedResponse& b) {
    CHECK(a.results == b.results);
    CHECK(a.generator_scores == b.generator_scores);
    CHECK(a.tag == b.tag);
    CHECK(a.reason == b.reason);
}

// Forwards to a leaf and records the serialized request sizes.
class RecordingClient : public LeafClient {
  public:
    explicit RecordingClient(std::shared_ptr<const Leaf> leaf) : leaf_(std::move(leaf)) {}
    RankResponse rank(const RankRequest& r) override {
        bytes.push_back(rank_request_to_json(r).size());
        return leaf_->rank(r);
    }
    std::vector<std::size_t> bytes;

  private:
    std::shared_ptr<const Leaf> leaf_;
};

}  // namespace

TEST_CASE("even shard maps partition the hash space") {
    for (std::size_t n : {1, 2, 3, 4, 7}) {
        const auto map = ShardMap::even(n);
        REQUIRE(map.leaves().size() == n);
        CHECK(map.leaves().front().range.lo == 0);
        CHECK(map.leaves().back().range.hi == ~std::uint64_t{0});
        for (std::size_t i = 1; i < n; ++i) CHECK(map.leaves()[i].range.lo == map.leaves()[i - 1].range.hi + 1);
        for (int s = 0; s < 500; ++s) {
            const std::string sig = "sig" + std::to_string(s);
            std::size_t owners = 0;
            for (const auto& l : map.leaves()) owners += l.range.contains(signature_hash(sig));
            CHECK(owners == 1);
            CHECK(map.leaves()[map.leaf_of(sig)].range.contains(signature_hash(sig)));
        }
        const auto back = parse_shard_map(shard_map_to_json(map));
        CHECK(back.leaves() == map.leaves());
    }
}

TEST_CASE("shard maps reject gaps and overlaps") {
    const auto max = ~std::uint64_t{0};
    CHECK_THROWS_AS(ShardMap({{"a", {0, 10}, ""}, {"b", {12, max}, ""}}), Error);
    CHECK_THROWS_AS(ShardMap({{"a", {0, 10}, ""}, {"b", {10, max}, ""}}), Error);
    CHECK_THROWS_AS(ShardMap({{"a", {1, max}, ""}}), Error);
    CHECK_THROWS_AS(ShardMap({{"a", {0, 10}, ""}}), Error);
    CHECK_THROWS_AS(ShardMap({{"a", {0, 10}, ""}, {"a", {11, max}, ""}}), Error);
    CHECK_THROWS_AS(ShardMap(std::vector<LeafAddress>{}), Error);
    CHECK_NOTHROW(ShardMap({{"b", {11, max}, ""}, {"a", {0, 10}, ""}}));

    CHECK(parse_range("0:ff") == ShardRange{0, 255});
    CHECK(parse_range("0x10:0X20") == ShardRange{16, 32});
    CHECK(to_string(ShardRange{1, 2}) == "0000000000000001:0000000000000002");
    CHECK_THROWS_AS(parse_range("10"), Error);
    CHECK_THROWS_AS(parse_range("20:10"), Error);
    CHECK_THROWS_AS(parse_range("0:xyz"), Error);
    CHECK_THROWS_AS(parse_range("0:11112222333344445"), Error);
}

TEST_CASE("wire messages round-trip exactly") {
    RankRequest req;
    req.query = "q";
    req.user.language = "fr";
    req.user.recent_search_tokens = {"Mixed", "case"};
    req.user.long_term_category_vector = {0.1, 1.0 / 3.0};
    req.candidates = {{"a", Source::walk, 0.123456789012345678}, {"b", Source::visual, 1e-300}};
    MemboostStats st;
    st.counts = {1, 2, 3, 4};
    st.expected = {0.1, 0.2, 1.0 / 7.0, 0.4};
    st.impressions = 9;
    req.memboost = {{"a", st}};
    req.top_k = 7;
    req.deadline_ms = 42;
    CHECK(rank_request_from_json(rank_request_to_json(req)) == req);

    RankResponse res;
    res.leaf = "leaf1";
    res.results = {{"a", Source::walk, 0.5, -1.0 / 3.0, false}, {"b", Source::search, 0.0, 2.0, true}};
    res.unknown = {"z"};
    res.not_owned = {"y"};
    res.elapsed_ms = 1.5;
    CHECK(rank_response_from_json(rank_response_to_json(res)) == res);
    CHECK_THROWS_AS(rank_request_from_json("{"), Error);
    CHECK_THROWS_AS(rank_response_from_json(R"({"leaf": "x"})"), Error);
}

TEST_CASE("a leaf scores only what it owns") {
    const auto& w = shared_world();
    const auto map = ShardMap::even(3);
    const auto leaves = w.leaves(map);
    RankRequest req;
    req.query = w.world.queries.front();
    for (const auto& rec : w.pins->records()) req.candidates.push_back({rec.image_signature, Source::board_cooc, 1.0});
    req.candidates.push_back({"no-such-pin", Source::board_cooc, 1.0});
    req.top_k = 1000;

    std::set<std::string> scored;
    for (const auto& leaf : leaves) {
        const auto res = leaf->rank(req);
        CHECK(res.leaf == leaf->id());
        for (const auto& r : res.results) {
            CHECK(leaf->owns(r.signature));
            CHECK(scored.insert(r.signature).second);
        }
        for (const auto& s : res.not_owned) CHECK_FALSE(leaf->owns(s));
        CHECK(res.results.size() + res.not_owned.size() + res.unknown.size() == req.candidates.size());
        for (std::size_t i = 1; i < res.results.size(); ++i) CHECK(res.results[i - 1].score >= res.results[i].score);
        if (leaf->owns("no-such-pin")) CHECK(res.unknown == std::vector<std::string>{"no-such-pin"});
    }
    CHECK(scored.size() == w.pins->size());

    req.top_k = 3;
    CHECK(leaves[0]->rank(req).results.size() == 3);

    Leaf empty("e", {}, w.pins);
    CHECK_THROWS_AS(empty.rank(req), Error);
    empty.set_model(w.model);
    CHECK(empty.rank(req).results.size() == 3);
}

TEST_CASE("scatter-gather equals the single-process reference") {
    const auto& w = shared_world();
    for (std::size_t leaves : {1, 4}) {
        const auto root = w.root(ShardMap::even(leaves));
        for (std::size_t i = 0; i < 120; ++i) {
            const auto req = w.request(i, 1 + i % 15);
            const auto got = root.related(req);
            const auto ref = related_reference(w.state(), *w.pins, *w.model, req);
            CHECK_FALSE(got.partial);
            check_same(got, ref);
            CHECK(got.results.size() <= req.top_k);
        }
    }
}

TEST_CASE("memboost and local swap run after the merge") {
    const auto& w = shared_world();
    PipelineConfig cfg;
    cfg.memboost.gamma = 0.5;
    cfg.memboost.insert_count = 2;
    const auto root = w.root(ShardMap::even(4), cfg);
    PipelineConfig plain = cfg;
    plain.memboost_boost = false;
    plain.memboost_insert = false;
    plain.local_swap = false;
    const auto bare = w.root(ShardMap::even(4), plain);
    std::size_t changed = 0, inserted = 0, swapped = 0;
    for (std::size_t i = 0; i < 150; ++i) {
        auto req = w.request(i);
        const auto got = root.related(req);
        check_same(got, related_reference(w.state(cfg), *w.pins, *w.model, req));
        const auto base = bare.related(req);
        std::set<std::string> base_sigs;
        for (const auto& r : base.results) base_sigs.insert(r.signature);
        for (std::size_t k = 0; k < got.results.size(); ++k) {
            inserted += base_sigs.count(got.results[k].signature) == 0;
            if (k < base.results.size() && got.results[k].signature == base.results[k].signature &&
                got.results[k].pin_id != base.results[k].pin_id) {
                ++swapped;
                CHECK(got.results[k].locale == req.user.language);
            }
        }
        changed += got.results != base.results;
    }
    CHECK(changed > 0);
    CHECK(inserted > 0);
    CHECK(swapped > 0);
}

TEST_CASE("degenerate requests") {
    const auto& w = shared_world();
    const auto root = w.root(ShardMap::even(2));
    auto req = w.request(0, 0);
    auto res = root.related(req);
    CHECK(res.results.empty());
    CHECK(res.reason.empty());
    CHECK_FALSE(res.partial);

    req = w.request(0);
    req.query = "nope";
    res = root.related(req);
    CHECK(res.results.empty());
    CHECK(res.reason.find("unknown query") != std::string::npos);
    check_same(res, related_reference(w.state(), *w.pins, *w.model, req));
}

TEST_CASE("a slow leaf yields a flagged partial result") {
    const auto& w = shared_world();
    const auto map = ShardMap::even(2);
    const auto leaves = w.leaves(map);
    PipelineState st = w.state();
    st.config.deadline_ms = 50;
    st.config.memboost_insert = false;  // insertions may come from any shard
    Root root(map, {local_leaf_client(leaves[0]), local_leaf_client(leaves[1], std::chrono::milliseconds(400))}, st);
    const auto req = w.request(3);
    const auto res = root.related(req);
    CHECK(res.partial);
    bool timed_out = false;
    for (const auto& t : res.leaves) timed_out = timed_out || (t.leaf == "leaf1" && t.timed_out);
    CHECK(timed_out);
    for (const auto& r : res.results) CHECK(leaves[0]->owns(r.signature));
    std::this_thread::sleep_for(std::chrono::milliseconds(450));  // let the straggler finish
}

TEST_CASE("gated sessions are unranked, tagged and logged") {
    const auto& w = shared_world();
    PipelineConfig cfg;
    cfg.unbiased_fraction = 1.0;
    auto root = w.root(ShardMap::even(2), cfg);
    const auto again = w.root(ShardMap::even(2), cfg);
    std::vector<EngagementEvent> logged;
    root.set_log_sink([&](const std::vector<EngagementEvent>& ev) { logged.insert(logged.end(), ev.begin(), ev.end()); });
    std::size_t differs_from_ranked = 0;
    const auto ranked_root = w.root(ShardMap::even(2));
    for (std::size_t i = 0; i < 40; ++i) {
        const auto req = w.request(i);
        const auto res = root.related(req);
        CHECK(res.tag == "unbiased");
        CHECK(res.results.size() <= req.top_k);
        check_same(res, again.related(req));
        check_same(res, related_reference(w.state(cfg), *w.pins, *w.model, req));
        differs_from_ranked += res.results != ranked_root.related(req).results;
    }
    CHECK(differs_from_ranked > 30);
    REQUIRE_FALSE(logged.empty());
    for (const auto& e : logged) {
        CHECK(e.action == Action::impression);
        CHECK(e.tag == "unbiased");
        CHECK(e.source.has_value());
    }
    const auto log = EngagementLog::from_events(logged);
    CHECK(log.rejected() == 0);
    CHECK(log.sessions().size() == 40);
}

TEST_CASE("serve logs are written as events.jsonl") {
    const auto& w = shared_world();
    TempDir dir;
    auto root = w.root(ShardMap::even(2));
    root.set_log_sink(file_log_sink(dir.path() / "events.jsonl"));
    for (std::size_t i = 0; i < 5; ++i) root.related(w.request(i));
    const auto log = load_engagement(dir.path() / "events.jsonl");
    CHECK(log.sessions().size() == 5);
    CHECK(log.rejected() == 0);
    for (const auto& s : log.sessions()) CHECK(s.tag == "ranked");
}

TEST_CASE("root payload does not grow with pin raw data") {
    // Two corpora with the same signatures; the second carries much more raw data.
    std::vector<PinRecord> small, large;
    for (int i = 0; i < 40; ++i) {
        const std::string sig = "p" + std::to_string(i);
        small.push_back(make_pin(sig, {"a"}));
        std::vector<std::string> tokens;
        for (int t = 0; t < 200; ++t) tokens.push_back("token" + std::to_string(t));
        std::vector<double> vis(512, 0.0);
        vis[static_cast<std::size_t>(i)] = 1.0;
        large.push_back(make_pin(sig, tokens, {}, "en", 1, vis));
    }
    auto measure = [](std::vector<PinRecord> recs) {
        auto pins = std::make_shared<const PinCorpus>(make_corpus(std::move(recs)));
        const FeatureSchema schema;
        RankingModel model;
        model.model = LinearModel{std::vector<double>(schema.dim(), 0.5)};
        model.fingerprint = schema.fingerprint();
        auto shared_model = std::make_shared<const RankingModel>(model);
        CandidateTable table;
        CandidateSet set;
        set.query_signature = "p0";
        for (int i = 1; i < 40; ++i) set.entries.push_back({"p" + std::to_string(i), Source::board_cooc, 1.0 / i});
        table["p0"] = {set};
        const auto map = ShardMap::even(4);
        std::vector<std::shared_ptr<RecordingClient>> rec;
        std::vector<std::shared_ptr<LeafClient>> clients;
        for (const auto& l : map.leaves()) {
            rec.push_back(std::make_shared<RecordingClient>(std::make_shared<const Leaf>(l.id, l.range, pins, shared_model)));
            clients.push_back(rec.back());
        }
        PipelineConfig cfg;
        cfg.deadline_ms = 5000;
        Root root(map, clients, {table_source(std::make_shared<const CandidateTable>(table)), pins, nullptr, cfg});
        RelatedRequest req;
        req.query = "p0";
        req.user_id = "u";
        req.top_k = 10;
        const auto res = root.related(req);
        CHECK(res.results.size() == 10);
        std::vector<std::size_t> bytes;
        for (const auto& r : rec) bytes.insert(bytes.end(), r->bytes.begin(), r->bytes.end());
        return bytes;
    };
    const auto a = measure(small);
    const auto b = measure(large);
    CHECK_FALSE(a.empty());
    CHECK(a == b);
}

TEST_CASE("candidate tables round-trip") {
    TempDir dir;
    CandidateTable table;
    CandidateSet a;
    a.query_signature = "q";
    a.entries = {{"x", Source::walk, 0.25}, {"y", Source::search, 1.0 / 3.0}};
    CandidateSet b;
    b.query_signature = "q";
    b.status = CandidateStatus::near_duplicate;
    table["q"] = {a, b};
    write_candidate_table(table, dir.path() / "c.jsonl");
    CHECK(load_candidate_table(dir.path() / "c.jsonl") == table);
    const auto src = table_source(std::make_shared<const CandidateTable>(table));
    CHECK(src("q", {}).size() == 2);
    CHECK(src("other", {}).empty());
}

TEST_CASE("HTTP leaves and root match the in-process pipeline") {
    const auto& w = shared_world();
    auto map = ShardMap::even(2);
    std::vector<std::unique_ptr<LeafServer>> servers;
    std::vector<std::thread> threads;
    std::vector<LeafAddress> addrs;
    for (const auto& l : map.leaves()) {
        auto leaf = std::make_shared<Leaf>(l.id, l.range, w.pins);  // model arrives by deployment
        servers.push_back(std::make_unique<LeafServer>(leaf));
        const int port = servers.back()->bind("127.0.0.1", 0);
        threads.emplace_back([s = servers.back().get()] { s->listen(); });
        addrs.push_back({l.id, l.range, "http://127.0.0.1:" + std::to_string(port)});
    }
    const ShardMap remote(addrs);
    deploy_model(remote, *w.model);

    std::vector<std::shared_ptr<LeafClient>> clients;
    for (const auto& l : remote.leaves()) clients.push_back(http_leaf_client(l.url));
    auto root = std::make_shared<Root>(remote, clients, w.state());
    for (std::size_t i = 0; i < 20; ++i) {
        const auto req = w.request(i);
        const auto got = root->related(req);
        CHECK_FALSE(got.partial);
        check_same(got, related_reference(w.state(), *w.pins, *w.model, req));
    }

    RootServer rs(root, w.world.users);
    const int root_port = rs.bind("127.0.0.1", 0);
    std::thread root_thread([&] { rs.listen(); });
    httplib::Client cli("127.0.0.1", root_port);
    const auto req = w.request(5);
    auto res = cli.Get("/related/" + req.query + "?user=" + req.user_id + "&k=10&ts=5&session=s5");
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto expected = related_reference(w.state(), *w.pins, *w.model, req);
    CHECK(res->body.find("\"signature\":\"" + expected.results.front().signature + "\"") != std::string::npos);
    res = cli.Get("/related/nope?user=u&k=3");
    REQUIRE(res);
    CHECK(res->body.find("unknown query") != std::string::npos);
    res = cli.Get("/related/x?k=abc");
    REQUIRE(res);
    CHECK(res->status == 400);

    rs.stop();
    root_thread.join();
    for (auto& s : servers) s->stop();
    for (auto& t : threads) t.join();
}
