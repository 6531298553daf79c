#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "relrec/corpus.hpp"

namespace relrec::testing {

inline PinRecord make_pin(const std::string& sig, std::vector<std::string> tokens = {},
                          std::vector<double> cat = {}, std::string locale = "en",
                          std::uint64_t popularity = 1, std::vector<double> vis = {}) {
    PinRecord p;
    p.image_signature = sig;
    p.instances.push_back({"pin-" + sig, locale});
    p.annotations = std::move(tokens);
    p.category_vector = cat.empty() ? std::vector<double>{1.0, 0.0, 0.0} : std::move(cat);
    p.annotation_embedding = {1.0, 0.0};
    p.visual_embedding = vis.empty() ? std::vector<double>{1.0, 0.0, 0.0} : std::move(vis);
    p.locale = std::move(locale);
    p.popularity = popularity;
    return p;
}

inline PinCorpus make_corpus(std::vector<PinRecord> records) {
    PinCorpusBuilder b;
    for (auto& r : records) b.add(std::move(r));
    return std::move(b).build();
}

inline PinCorpus make_corpus(const std::vector<std::string>& sigs) {
    std::vector<PinRecord> recs;
    for (const auto& s : sigs) recs.push_back(make_pin(s));
    return make_corpus(std::move(recs));
}

inline Board make_board(const std::string& id, std::vector<std::string> pins, std::string locale = "en") {
    Board b;
    b.board_id = id;
    b.locale = std::move(locale);
    b.pin_signatures = std::move(pins);
    return b;
}

/// Self-deleting scratch directory.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("relrec_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

/// Sessions in which one user saves `saves_per_session` distinct pins of a
/// single cluster, ten seconds apart. Pin "c<k>_<j>" belongs to cluster k.
inline std::vector<EngagementEvent> planted_session_events(int clusters, int pins_per_cluster, int sessions,
                                                           int saves_per_session, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<EngagementEvent> out;
    for (int s = 0; s < sessions; ++s) {
        int c = static_cast<int>(rng.below(clusters));
        std::vector<int> members(pins_per_cluster);
        for (int j = 0; j < pins_per_cluster; ++j) members[j] = j;
        rng.shuffle(members);
        for (int j = 0; j < saves_per_session; ++j) {
            EngagementEvent e;
            e.session_id = "s" + std::to_string(s);
            e.user_id = "u" + std::to_string(s);
            e.query_signature = "query" + std::to_string(c);
            e.result_signature = "c" + std::to_string(c) + "_" + std::to_string(members[j]);
            e.platform = "web";
            e.rank = j;
            e.timestamp = std::int64_t{s} * 100'000 + j * 10;
            out.push_back(e);
            e.action = Action::save;
            out.push_back(e);
        }
    }
    return out;
}

/// Random sessions over a small query/result vocabulary, with each result
/// impressed once and engaged with rank-decaying probability.
inline std::vector<EngagementEvent> random_engagement_events(int sessions, std::uint64_t seed, int queries = 5,
                                                             int results = 30, int depth = 8) {
    Rng rng(seed);
    const std::vector<std::string> platforms = {"web", "ios", "android"};
    const Action actions[] = {Action::closeup, Action::click, Action::long_click, Action::save};
    std::vector<EngagementEvent> out;
    for (int s = 0; s < sessions; ++s) {
        EngagementEvent base;
        base.session_id = "s" + std::to_string(s);
        base.user_id = "u" + std::to_string(rng.below(50));
        base.query_signature = "q" + std::to_string(rng.below(queries));
        base.platform = platforms[rng.below(platforms.size())];
        base.timestamp = s;
        std::vector<int> shown(results);
        for (int i = 0; i < results; ++i) shown[i] = i;
        rng.shuffle(shown);
        for (int k = 0; k < depth; ++k) {
            EngagementEvent e = base;
            e.result_signature = "r" + std::to_string(shown[k]);
            e.rank = k;
            out.push_back(e);
            for (Action a : actions) {
                if (rng.bernoulli(0.3 / (1.0 + k))) {
                    e.action = a;
                    out.push_back(e);
                }
            }
        }
    }
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace relrec::testing
