#include "relrec/pin2vec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

namespace relrec {

namespace {

constexpr char kTableMagic[8] = {'R', 'R', 'P', '2', 'V', 'E', 'C', '\0'};
constexpr std::uint32_t kTableVersion = 1;

Vocabulary make_vocabulary(std::vector<std::pair<std::string, double>> counts, std::size_t n) {
    std::sort(counts.begin(), counts.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (counts.size() > n) counts.resize(n);
    Vocabulary v;
    for (auto& [sig, w] : counts) {
        v.index.emplace(sig, static_cast<std::uint32_t>(v.signatures.size()));
        v.signatures.push_back(std::move(sig));
        v.weights.push_back(w);
    }
    return v;
}

double sigmoid(double x) {
    if (x > 30.0) return 1.0;
    if (x < -30.0) return 0.0;
    return 1.0 / (1.0 + std::exp(-x));
}

std::uint64_t fingerprint_of(const Vocabulary& vocab, const Pin2VecConfig& cfg) {
    std::uint64_t h = stable_hash64("pin2vec");
    auto fold = [&](std::uint64_t x) { h = mix64(h ^ x); };
    fold(cfg.dim);
    fold(static_cast<std::uint64_t>(cfg.window_seconds));
    fold(cfg.negatives_per_positive);
    fold(cfg.epochs);
    fold(cfg.seed);
    fold(static_cast<std::uint64_t>(cfg.output));
    std::uint64_t lr_bits;
    std::memcpy(&lr_bits, &cfg.learning_rate, sizeof lr_bits);
    fold(lr_bits);
    for (const auto& s : vocab.signatures) fold(stable_hash64(s));
    return h;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw Error("truncated embedding table");
    return v;
}

}  // namespace

std::optional<std::uint32_t> Vocabulary::find(std::string_view sig) const {
    auto it = index.find(std::string(sig));
    if (it == index.end()) return std::nullopt;
    return it->second;
}

Vocabulary build_vocabulary(const EngagementLog& log, std::size_t n) {
    std::map<std::string, double> saves;
    for (const auto& e : log.events()) {
        if (e.action == Action::save) saves[e.result_signature] += 1.0;
    }
    return make_vocabulary({saves.begin(), saves.end()}, n);
}

Vocabulary build_vocabulary(const PinCorpus& pins, std::size_t n) {
    std::vector<std::pair<std::string, double>> counts;
    for (const auto& r : pins.records()) counts.emplace_back(r.image_signature, static_cast<double>(r.popularity));
    return make_vocabulary(std::move(counts), n);
}

std::vector<PinPair> extract_session_pairs(const EngagementLog& log, const Vocabulary& vocab,
                                           const Pin2VecConfig& cfg) {
    struct Save {
        std::int64_t ts;
        std::uint32_t pin;
    };
    std::map<std::string, std::vector<Save>> by_user;
    for (const auto& e : log.events()) {
        if (e.action != Action::save) continue;
        auto idx = vocab.find(e.result_signature);
        if (!idx) continue;
        by_user[e.user_id].push_back({e.timestamp, *idx});
    }
    std::vector<PinPair> pairs;
    for (auto& [user, saves] : by_user) {
        std::stable_sort(saves.begin(), saves.end(), [](const Save& a, const Save& b) { return a.ts < b.ts; });
        for (std::size_t i = 0; i < saves.size(); ++i) {
            for (std::size_t j = i + 1; j < saves.size() && saves[j].ts - saves[i].ts <= cfg.window_seconds; ++j) {
                if (saves[i].pin == saves[j].pin) continue;
                pairs.emplace_back(saves[i].pin, saves[j].pin);
                pairs.emplace_back(saves[j].pin, saves[i].pin);
            }
        }
    }
    return pairs;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> vocab, std::size_t dim, std::vector<double> vectors,
                               std::uint64_t fingerprint)
    : vocab_(std::move(vocab)), dim_(dim), vectors_(std::move(vectors)), fingerprint_(fingerprint) {
    if (vectors_.size() != vocab_.size() * dim_) throw Error("embedding table size mismatch");
    for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<std::uint32_t>(i));
}

std::optional<std::uint32_t> EmbeddingTable::find(std::string_view sig) const {
    auto it = index_.find(std::string(sig));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Pin2VecResult train_pin2vec(const std::vector<PinPair>& pairs, const Vocabulary& vocab, const Pin2VecConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("pin2vec: no training pairs");
    if (cfg.dim == 0) throw std::invalid_argument("pin2vec: dimension must be positive");
    if (cfg.epochs == 0) throw std::invalid_argument("pin2vec: epochs must be positive");
    const std::size_t n = vocab.size();
    const std::size_t d = cfg.dim;
    for (const auto& [a, b] : pairs) {
        if (a >= n || b >= n) throw std::invalid_argument("pin2vec: pair index outside vocabulary");
    }

    Rng rng(cfg.seed);
    std::vector<double> in(n * d);
    std::vector<double> out(n * d, 0.0);
    for (auto& x : in) x = (rng.uniform() - 0.5) / static_cast<double>(d);

    // unigram^0.75 cumulative table for negatives
    std::vector<double> cumulative(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += std::pow(std::max(vocab.weights[i], 0.0), 0.75);
        cumulative[i] = acc;
    }
    if (acc <= 0.0) {
        std::iota(cumulative.begin(), cumulative.end(), 1.0);
        acc = static_cast<double>(n);
    }
    auto draw_negative = [&]() -> std::uint32_t {
        double u = rng.uniform() * acc;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        if (it == cumulative.end()) --it;
        return static_cast<std::uint32_t>(it - cumulative.begin());
    };

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad_in(d);
    const double total = static_cast<double>(cfg.epochs * pairs.size());
    double processed = 0.0;

    Pin2VecResult result;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffler(derive_seed(cfg.seed, epoch + 1));
        shuffler.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t idx : order) {
            const auto [a, b] = pairs[idx];
            const double lr = cfg.learning_rate * std::max(1e-4, 1.0 - processed / total);
            processed += 1.0;
            double* ua = &in[a * d];
            std::fill(grad_in.begin(), grad_in.end(), 0.0);
            auto update = [&](std::uint32_t target, double label) {
                double* vt = &out[target * d];
                double s = 0.0;
                for (std::size_t k = 0; k < d; ++k) s += ua[k] * vt[k];
                double f = sigmoid(s);
                double p = label > 0.5 ? f : 1.0 - f;
                epoch_loss -= std::log(std::max(p, 1e-12));
                double g = (label - f) * lr;
                for (std::size_t k = 0; k < d; ++k) {
                    grad_in[k] += g * vt[k];
                    vt[k] += g * ua[k];
                }
            };
            update(b, 1.0);
            for (std::size_t k = 0; k < cfg.negatives_per_positive; ++k) {
                std::uint32_t neg = draw_negative();
                if (neg == b) continue;
                update(neg, 0.0);
            }
            for (std::size_t k = 0; k < d; ++k) ua[k] += grad_in[k];
        }
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));
    }

    const bool add_output = cfg.output == Pin2VecConfig::Output::input_plus_output;
    std::vector<double> rows(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            rows[i * d + k] = in[i * d + k] + (add_output ? out[i * d + k] : 0.0);
            norm += rows[i * d + k] * rows[i * d + k];
        }
        norm = std::sqrt(norm);
        if (norm > 0.0) {
            for (std::size_t k = 0; k < d; ++k) rows[i * d + k] /= norm;
        }
        for (std::size_t k = 0; k < d; ++k) {
            if (!std::isfinite(rows[i * d + k])) throw Error("pin2vec: training diverged");
        }
    }
    result.table = EmbeddingTable(vocab.signatures, d, std::move(rows), fingerprint_of(vocab, cfg));
    return result;
}

CandidateSet neighbors(const EmbeddingTable& table, std::string_view query, std::size_t k) {
    CandidateSet out;
    out.query_signature = std::string(query);
    auto q = table.find(query);
    if (!q) {
        out.status = CandidateStatus::out_of_vocab;
        return out;
    }
    if (k == 0) return out;
    auto qrow = table.row(*q);
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (i == *q) continue;
        out.entries.push_back({table.vocab()[i], Source::pin2vec, cosine(qrow, table.row(i))});
    }
    sort_by_score(out.entries);
    if (out.entries.size() > k) out.entries.resize(k);
    return out;
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(kTableMagic, sizeof kTableMagic);
    write_pod(out, kTableVersion);
    write_pod(out, static_cast<std::uint64_t>(table.size()));
    write_pod(out, static_cast<std::uint64_t>(table.dim()));
    write_pod(out, table.fingerprint());
    for (double x : table.data()) write_pod(out, x);
    for (const auto& s : table.vocab()) {
        write_pod(out, static_cast<std::uint32_t>(s.size()));
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }
    if (!out) throw Error("write failed: " + path.string());
}

EmbeddingTable load_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    char magic[sizeof kTableMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kTableMagic, sizeof magic) != 0) throw Error("not an embedding table: " + path.string());
    if (read_pod<std::uint32_t>(in) != kTableVersion) throw Error("unsupported embedding table version");
    auto n = read_pod<std::uint64_t>(in);
    auto d = read_pod<std::uint64_t>(in);
    auto fp = read_pod<std::uint64_t>(in);
    std::vector<double> data(n * d);
    for (auto& x : data) x = read_pod<double>(in);
    std::vector<std::string> vocab(n);
    for (auto& s : vocab) {
        auto len = read_pod<std::uint32_t>(in);
        s.resize(len);
        in.read(s.data(), len);
        if (!in) throw Error("truncated embedding table");
    }
    return EmbeddingTable(std::move(vocab), d, std::move(data), fp);
}

}  // namespace relrec
