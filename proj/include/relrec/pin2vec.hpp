#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"

namespace relrec {

struct Pin2VecConfig {
    std::size_t vocab_size = 10'000;  // N head pins
    std::size_t dim = 64;             // d
    std::int64_t window_seconds = 1800;
    std::size_t negatives_per_positive = 5;
    std::size_t epochs = 5;
    double learning_rate = 0.025;  // linearly decayed to 1e-4 of itself
    std::uint64_t seed = 0;
    /// Rows returned: input vectors u only, or the sum u + v.
    enum class Output { input, input_plus_output } output = Output::input_plus_output;
};

/// Head pins, most popular first. `weights` drive negative sampling.
struct Vocabulary {
    std::vector<std::string> signatures;
    std::vector<double> weights;
    std::unordered_map<std::string, std::uint32_t> index;

    std::size_t size() const { return signatures.size(); }
    std::optional<std::uint32_t> find(std::string_view sig) const;
};

/// N most-saved signatures in the log (ties by signature).
Vocabulary build_vocabulary(const EngagementLog& log, std::size_t n);
/// N pins with the highest corpus popularity (ties by signature).
Vocabulary build_vocabulary(const PinCorpus& pins, std::size_t n);

using PinPair = std::pair<std::uint32_t, std::uint32_t>;

/// Every unordered pair of saves by one user at most window_seconds apart,
/// both in the vocabulary and distinct, emitted in both directions.
std::vector<PinPair> extract_session_pairs(const EngagementLog& log, const Vocabulary& vocab,
                                           const Pin2VecConfig& cfg);

class EmbeddingTable {
  public:
    EmbeddingTable() = default;
    EmbeddingTable(std::vector<std::string> vocab, std::size_t dim, std::vector<double> vectors,
                   std::uint64_t fingerprint);

    std::size_t size() const { return vocab_.size(); }
    std::size_t dim() const { return dim_; }
    std::uint64_t fingerprint() const { return fingerprint_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    const std::vector<double>& data() const { return vectors_; }
    std::optional<std::uint32_t> find(std::string_view sig) const;
    std::span<const double> row(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }

    bool operator==(const EmbeddingTable& o) const {
        return vocab_ == o.vocab_ && dim_ == o.dim_ && vectors_ == o.vectors_ && fingerprint_ == o.fingerprint_;
    }

  private:
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::size_t dim_ = 0;
    std::vector<double> vectors_;
    std::uint64_t fingerprint_ = 0;
};

struct Pin2VecResult {
    EmbeddingTable table;
    std::vector<double> epoch_loss;  // mean loss per pair, one entry per epoch
};

/// Skip-gram with negative sampling over the pairs. Negatives are drawn
/// from the vocabulary by weight^0.75. Deterministic for a fixed seed and
/// pair order. Rows are unit-normalized.
Pin2VecResult train_pin2vec(const std::vector<PinPair>& pairs, const Vocabulary& vocab, const Pin2VecConfig& cfg);

/// Top-k vocabulary pins by cosine similarity, exact scan, query excluded.
CandidateSet neighbors(const EmbeddingTable& table, std::string_view query, std::size_t k);

void save_table(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_table(const std::filesystem::path& path);

}  // namespace relrec
