#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"
#include "relrec/memboost.hpp"

namespace relrec {

struct FeatureConfig {
    std::vector<std::string> genders = {"female", "male"};
    std::vector<std::string> countries = {"US", "GB", "FR", "DE", "BR", "JP", "IN"};
};

/// Named layout of the dense feature vector.
class FeatureSchema {
  public:
    struct Range {
        std::string name;
        std::size_t begin = 0;
        std::size_t size = 1;
    };

    explicit FeatureSchema(const FeatureConfig& cfg = {});

    std::size_t dim() const { return names_.size(); }
    std::uint64_t fingerprint() const { return fingerprint_; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<Range>& ranges() const { return ranges_; }
    const FeatureConfig& config() const { return cfg_; }
    /// Start of a named range; throws Error for unknown names.
    std::size_t index(std::string_view name) const;

  private:
    void add(std::string name, std::vector<std::string> slot_names);

    FeatureConfig cfg_;
    std::vector<Range> ranges_;
    std::vector<std::string> names_;
    std::uint64_t fingerprint_ = 0;
};

struct FeatureVector {
    std::vector<double> values;
    std::uint64_t fingerprint = 0;
};

/// Everything the extractor reads for one (query, user, candidate).
struct FeatureInput {
    const PinRecord* query = nullptr;
    const UserContext* user = nullptr;
    const PinRecord* candidate = nullptr;
    std::optional<Source> source;
    double generator_score = 0.0;
    std::array<double, kMemboostFeatureCount> memboost{};
};

/// Non-finite intermediate values are written as 0.
FeatureVector extract_features(const FeatureSchema& schema, const FeatureInput& in);

/// Extraction bound to a corpus and an optional Memboost store.
class Featurizer {
  public:
    Featurizer(const FeatureSchema& schema, const PinCorpus& pins, const MemboostStore* store = nullptr,
               double memboost_alpha = 1.0);

    const FeatureSchema& schema() const { return *schema_; }
    const PinCorpus& pins() const { return *pins_; }

    /// nullopt when the query or the candidate is not in the corpus.
    std::optional<FeatureVector> features(std::string_view query, const UserContext& user, std::string_view candidate,
                                          std::optional<Source> source, double generator_score) const;

  private:
    const FeatureSchema* schema_;
    const PinCorpus* pins_;
    const MemboostStore* store_;
    double alpha_;
};

}  // namespace relrec
