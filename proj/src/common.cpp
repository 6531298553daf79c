#include "relrec/common.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <unordered_set>

namespace relrec {

namespace {

constexpr std::array<std::string_view, kNumActions> kActionNames = {
    "impression", "closeup", "click", "long_click", "save"};

constexpr std::array<std::string_view, kNumSources> kSourceNames = {
    "board_cooc", "walk", "pin2vec", "search", "visual", "segmented"};

}  // namespace

std::string_view to_string(Action a) { return kActionNames[static_cast<int>(a)]; }

Action parse_action(std::string_view s) {
    for (int i = 0; i < kNumActions; ++i) {
        if (kActionNames[i] == s) return static_cast<Action>(i);
    }
    throw Error("unknown action: " + std::string(s));
}

std::string_view to_string(Source s) { return kSourceNames[static_cast<int>(s)]; }

Source parse_source(std::string_view s) {
    for (int i = 0; i < kNumSources; ++i) {
        if (kSourceNames[i] == s) return static_cast<Source>(i);
    }
    // "cooc" is the short CLI spelling
    if (s == "cooc") return Source::board_cooc;
    throw Error("unknown candidate source: " + std::string(s));
}

std::string_view to_string(CandidateStatus s) {
    switch (s) {
        case CandidateStatus::ok: return "ok";
        case CandidateStatus::unknown_query: return "unknown_query";
        case CandidateStatus::out_of_vocab: return "out_of_vocab";
        case CandidateStatus::degenerate_query: return "degenerate_query";
        case CandidateStatus::near_duplicate: return "near_duplicate";
    }
    return "?";
}

void sort_by_score(std::vector<CandidateEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const CandidateEntry& a, const CandidateEntry& b) {
        if (a.generator_score != b.generator_score) return a.generator_score > b.generator_score;
        return a.signature < b.signature;
    });
}

void sort_by_score(std::vector<ScoredResult>& results) {
    std::sort(results.begin(), results.end(), [](const ScoredResult& a, const ScoredResult& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.signature < b.signature;
    });
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) return 0.0;
    double na = l2_norm(a);
    double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::unordered_set<std::string_view> sa(a.begin(), a.end());
    std::unordered_set<std::string_view> sb(b.begin(), b.end());
    if (sa.empty() && sb.empty()) return 0.0;
    std::size_t inter = 0;
    for (auto t : sa) inter += sb.count(t);
    std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t stable_hash64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double Rng::normal(double mean, double stddev) {
    if (has_spare_) {
        has_spare_ = false;
        return mean + stddev * spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
}

std::uint64_t env_seed(std::uint64_t fallback) {
    const char* v = std::getenv("RELREC_SEED");
    if (v == nullptr || *v == '\0') return fallback;
    return std::strtoull(v, nullptr, 0);
}

}  // namespace relrec
