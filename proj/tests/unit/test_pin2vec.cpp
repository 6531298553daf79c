#include "doctest.h"
#include "fixtures.hpp"

#include <map>
#include <set>

#include "relrec/pin2vec.hpp"

using namespace relrec;
using namespace relrec::testing;

namespace {

EngagementEvent save(const std::string& user, const std::string& pin, std::int64_t ts) {
    EngagementEvent e;
    e.session_id = user + "@" + std::to_string(ts) + pin;
    e.user_id = user;
    e.query_signature = "q";
    e.result_signature = pin;
    e.platform = "web";
    e.timestamp = ts;
    return e;
}

EngagementLog saves_log(const std::vector<std::tuple<std::string, std::string, std::int64_t>>& saves) {
    std::vector<EngagementEvent> ev;
    for (const auto& [u, p, ts] : saves) {
        auto e = save(u, p, ts);
        ev.push_back(e);
        e.action = Action::save;
        ev.push_back(e);
    }
    return EngagementLog::from_events(ev);
}

std::string cluster_of(const std::string& sig) { return sig.substr(0, sig.find('_')); }

double top5_purity(const EmbeddingTable& table) {
    double hits = 0, total = 0;
    for (const auto& sig : table.vocab()) {
        for (const auto& e : neighbors(table, sig, 5).entries) {
            hits += cluster_of(e.signature) == cluster_of(sig);
            total += 1;
        }
    }
    return hits / total;
}

}  // namespace

TEST_CASE("session pairs: two saves inside the window") {
    auto log = saves_log({{"u", "A", 0}, {"u", "B", 10}});
    Pin2VecConfig cfg;
    cfg.window_seconds = 60;
    auto vocab = build_vocabulary(log, 10);
    auto pairs = extract_session_pairs(log, vocab, cfg);
    REQUIRE(pairs.size() == 2);
    std::set<std::pair<std::string, std::string>> named;
    for (auto [a, b] : pairs) named.emplace(vocab.signatures[a], vocab.signatures[b]);
    CHECK(named == std::set<std::pair<std::string, std::string>>{{"A", "B"}, {"B", "A"}});
}

TEST_CASE("session pairs: saves two hours apart") {
    auto log = saves_log({{"u", "A", 0}, {"u", "B", 7200}});
    Pin2VecConfig cfg;
    cfg.window_seconds = 60;
    CHECK(extract_session_pairs(log, build_vocabulary(log, 10), cfg).empty());
}

TEST_CASE("session pairs: three saves give every ordered pair") {
    auto log = saves_log({{"u", "A", 0}, {"u", "B", 5}, {"u", "C", 9}, {"v", "A", 1}});
    Pin2VecConfig cfg;
    cfg.window_seconds = 60;
    auto pairs = extract_session_pairs(log, build_vocabulary(log, 10), cfg);
    CHECK(pairs.size() == 3 * 2);
}

TEST_CASE("session pairs: different users and out-of-vocab pins do not pair") {
    auto log = saves_log({{"u", "A", 0}, {"v", "B", 1}, {"u", "A", 2}, {"u", "A", 3}, {"u", "Z", 4}});
    Pin2VecConfig cfg;
    // A saved three times, B and Z once; vocab keeps A and B only
    auto vocab = build_vocabulary(log, 2);
    CHECK(vocab.signatures == std::vector<std::string>{"A", "B"});
    CHECK(extract_session_pairs(log, vocab, cfg).empty());
}

TEST_CASE("train rejects empty pairs and zero dimension") {
    auto log = saves_log({{"u", "A", 0}, {"u", "B", 1}});
    auto vocab = build_vocabulary(log, 10);
    Pin2VecConfig cfg;
    CHECK_THROWS_AS(train_pin2vec({}, vocab, cfg), std::invalid_argument);
    cfg.dim = 0;
    CHECK_THROWS_AS(train_pin2vec({{0, 1}}, vocab, cfg), std::invalid_argument);
}

TEST_CASE("planted pair: two pins seen only with each other are mutual top-1") {
    // background: 20 pins co-saved in a ring so that negatives are meaningful
    std::vector<std::tuple<std::string, std::string, std::int64_t>> saves;
    for (int i = 0; i < 20; ++i) {
        for (int rep = 0; rep < 10; ++rep) {
            std::string user = "bg" + std::to_string(i) + "_" + std::to_string(rep);
            saves.emplace_back(user, "bg" + std::to_string(i), 0);
            saves.emplace_back(user, "bg" + std::to_string((i + 1) % 20), 5);
        }
    }
    for (int rep = 0; rep < 500; ++rep) {
        std::string user = "p" + std::to_string(rep);
        saves.emplace_back(user, "X", 0);
        saves.emplace_back(user, "Y", 5);
    }
    auto log = saves_log(saves);
    Pin2VecConfig cfg;
    cfg.dim = 16;
    cfg.seed = 3;
    auto vocab = build_vocabulary(log, 100);
    auto pairs = extract_session_pairs(log, vocab, cfg);
    CHECK(std::count_if(pairs.begin(), pairs.end(), [&](PinPair p) {
              return vocab.signatures[p.first] == "X" || vocab.signatures[p.first] == "Y";
          }) == 1000);
    auto result = train_pin2vec(pairs, vocab, cfg);
    CHECK(neighbors(result.table, "X", 1).entries.at(0).signature == "Y");
    CHECK(neighbors(result.table, "Y", 1).entries.at(0).signature == "X");
}

TEST_CASE("training loss is non-increasing across epochs") {
    auto log = EngagementLog::from_events(planted_session_events(3, 30, 2000, 4, 11));
    Pin2VecConfig cfg;
    cfg.epochs = 6;
    auto vocab = build_vocabulary(log, 100);
    auto result = train_pin2vec(extract_session_pairs(log, vocab, cfg), vocab, cfg);
    REQUIRE(result.epoch_loss.size() == 6);
    for (std::size_t i = 1; i < result.epoch_loss.size(); ++i) {
        CHECK(result.epoch_loss[i] <= result.epoch_loss[i - 1] * 1.05);
    }
    CHECK(result.epoch_loss.back() < result.epoch_loss.front());
}

TEST_CASE("training is bit-identical for a fixed seed and differs across seeds") {
    auto log = EngagementLog::from_events(planted_session_events(3, 10, 300, 3, 5));
    Pin2VecConfig cfg;
    cfg.dim = 8;
    auto vocab = build_vocabulary(log, 100);
    auto pairs = extract_session_pairs(log, vocab, cfg);
    auto a = train_pin2vec(pairs, vocab, cfg);
    auto b = train_pin2vec(pairs, vocab, cfg);
    CHECK(a.table == b.table);
    CHECK(a.epoch_loss == b.epoch_loss);
    cfg.seed = 1;
    CHECK_FALSE(train_pin2vec(pairs, vocab, cfg).table == a.table);
    for (double x : a.table.data()) CHECK(std::isfinite(x));
}

TEST_CASE("planted clusters are recovered by top-5 neighbors") {
    auto log = EngagementLog::from_events(planted_session_events(3, 30, 5000, 4, 42));
    Pin2VecConfig cfg;
    auto vocab = build_vocabulary(log, 1000);
    REQUIRE(vocab.size() == 90);
    auto result = train_pin2vec(extract_session_pairs(log, vocab, cfg), vocab, cfg);
    CHECK(result.table.size() == 90);
    CHECK(top5_purity(result.table) >= 0.9);
}

TEST_CASE("neighbors: k bounds, ordering and out-of-vocab") {
    std::vector<double> v = {1, 0, 0.8, 0.6, 0, 1, -1, 0};
    EmbeddingTable t({"a", "b", "c", "d"}, 2, v, 7);
    CHECK(neighbors(t, "a", 0).empty());
    CHECK(neighbors(t, "a", 0).status == CandidateStatus::ok);

    auto all = neighbors(t, "a", 10);
    REQUIRE(all.size() == 3);
    CHECK(all.entries[0].signature == "b");
    CHECK(all.entries[1].signature == "c");
    CHECK(all.entries[2].signature == "d");
    for (const auto& e : all.entries) CHECK(e.source == Source::pin2vec);

    auto oov = neighbors(t, "zzz", 5);
    CHECK(oov.empty());
    CHECK(oov.status == CandidateStatus::out_of_vocab);
}

TEST_CASE("neighbors are invariant to uniform scaling of all vectors") {
    Rng rng(9);
    std::vector<std::string> vocab;
    std::vector<double> v;
    for (int i = 0; i < 30; ++i) {
        vocab.push_back("p" + std::to_string(i));
        for (int k = 0; k < 5; ++k) v.push_back(rng.normal());
    }
    EmbeddingTable base(vocab, 5, v, 0);
    for (double scale : {1e-3, 2.5, 1e4}) {
        auto scaled = v;
        for (auto& x : scaled) x *= scale;
        EmbeddingTable t(vocab, 5, scaled, 0);
        for (const auto& q : vocab) {
            auto a = neighbors(base, q, 7);
            auto b = neighbors(t, q, 7);
            REQUIRE(a.size() == b.size());
            for (std::size_t i = 0; i < a.size(); ++i) {
                CHECK(a.entries[i].signature == b.entries[i].signature);
                CHECK(a.entries[i].generator_score == doctest::Approx(b.entries[i].generator_score).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("embedding table save/load round-trip") {
    TempDir dir;
    EmbeddingTable t({"a", "b"}, 3, {0.1, 0.2, 0.3, -1, 0, 1}, 0xabcdef);
    save_table(t, dir / "t.bin");
    CHECK(load_table(dir / "t.bin") == t);
    write_text(dir / "bad.bin", "garbage");
    CHECK_THROWS_AS(load_table(dir / "bad.bin"), Error);
}
