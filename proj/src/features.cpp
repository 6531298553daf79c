#include "relrec/features.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace relrec {

namespace {

double finite_or_zero(double x) { return std::isfinite(x) ? x : 0.0; }

std::vector<std::string> one_hot_names(const std::string& prefix, const std::vector<std::string>& values) {
    std::vector<std::string> out;
    for (const auto& v : values) out.push_back(prefix + "=" + v);
    out.push_back(prefix + "=other");
    return out;
}

std::size_t one_hot_slot(const std::vector<std::string>& values, const std::string& v) {
    auto it = std::find(values.begin(), values.end(), v);
    return static_cast<std::size_t>(it - values.begin());  // == size() means "other"
}

}  // namespace

FeatureSchema::FeatureSchema(const FeatureConfig& cfg) : cfg_(cfg) {
    add("category_cosine", {});
    add("annotation_embedding_cosine", {});
    add("visual_cosine", {});
    add("annotation_jaccard", {});
    add("gender", one_hot_names("gender", cfg.genders));
    add("country", one_hot_names("country", cfg.countries));
    add("candidate_popularity", {});
    add("query_popularity", {});
    add("locale_match", {});
    add("user_category_affinity", {});
    add("recent_search_overlap", {});
    add("recent_activity_hit", {});
    add("generator_score", {});
    add("memboost", memboost_feature_names());
    std::vector<std::string> sources;
    for (int s = 0; s < kNumSources; ++s) sources.push_back("source=" + std::string(to_string(static_cast<Source>(s))));
    add("source", sources);

    std::uint64_t h = stable_hash64("relrec-features-v1");
    for (const auto& n : names_) h = mix64(h ^ stable_hash64(n));
    fingerprint_ = h;
}

void FeatureSchema::add(std::string name, std::vector<std::string> slot_names) {
    if (slot_names.empty()) slot_names.push_back(name);
    ranges_.push_back({std::move(name), names_.size(), slot_names.size()});
    for (auto& s : slot_names) names_.push_back(std::move(s));
}

std::size_t FeatureSchema::index(std::string_view name) const {
    for (const auto& r : ranges_) {
        if (r.name == name) return r.begin;
    }
    throw Error("unknown feature: " + std::string(name));
}

FeatureVector extract_features(const FeatureSchema& schema, const FeatureInput& in) {
    if (in.query == nullptr || in.candidate == nullptr) throw std::invalid_argument("extract_features: missing record");
    static const UserContext kNoUser;
    const PinRecord& q = *in.query;
    const PinRecord& c = *in.candidate;
    const UserContext& u = in.user != nullptr ? *in.user : kNoUser;
    const auto& cfg = schema.config();

    FeatureVector fv;
    fv.fingerprint = schema.fingerprint();
    fv.values.assign(schema.dim(), 0.0);
    auto set = [&](std::string_view name, double v, std::size_t offset = 0) {
        fv.values[schema.index(name) + offset] = finite_or_zero(v);
    };

    set("category_cosine", cosine(q.category_vector, c.category_vector));
    set("annotation_embedding_cosine", cosine(q.annotation_embedding, c.annotation_embedding));
    set("visual_cosine", cosine(q.visual_embedding, c.visual_embedding));
    set("annotation_jaccard", jaccard(q.annotations, c.annotations));
    set("gender", 1.0, one_hot_slot(cfg.genders, u.gender));
    set("country", 1.0, one_hot_slot(cfg.countries, u.country));
    set("candidate_popularity", std::log1p(static_cast<double>(c.popularity)));
    set("query_popularity", std::log1p(static_cast<double>(q.popularity)));
    if (!u.language.empty()) set("locale_match", c.instance_in_locale(u.language) != nullptr ? 1.0 : 0.0);
    if (u.long_term_category_vector.size() == c.category_vector.size()) {
        set("user_category_affinity", dot(u.long_term_category_vector, c.category_vector));
    }
    if (!u.recent_search_tokens.empty()) {
        std::set<std::string> tokens(c.annotations.begin(), c.annotations.end());
        std::set<std::string> searched(u.recent_search_tokens.begin(), u.recent_search_tokens.end());
        double hits = 0.0;
        for (const auto& t : searched) hits += tokens.count(t);
        set("recent_search_overlap", hits / static_cast<double>(searched.size()));
    }
    const auto& recent = u.recent_activity_signatures;
    set("recent_activity_hit", std::find(recent.begin(), recent.end(), c.image_signature) != recent.end() ? 1.0 : 0.0);
    set("generator_score", in.generator_score);
    for (std::size_t i = 0; i < kMemboostFeatureCount; ++i) set("memboost", in.memboost[i], i);
    if (in.source) set("source", 1.0, static_cast<std::size_t>(*in.source));
    return fv;
}

Featurizer::Featurizer(const FeatureSchema& schema, const PinCorpus& pins, const MemboostStore* store,
                       double memboost_alpha)
    : schema_(&schema), pins_(&pins), store_(store), alpha_(memboost_alpha) {}

std::optional<FeatureVector> Featurizer::features(std::string_view query, const UserContext& user,
                                                  std::string_view candidate, std::optional<Source> source,
                                                  double generator_score) const {
    FeatureInput in;
    in.query = pins_->find(query);
    in.candidate = pins_->find(candidate);
    if (in.query == nullptr || in.candidate == nullptr) return std::nullopt;
    in.user = &user;
    in.source = source;
    in.generator_score = generator_score;
    if (store_ != nullptr) in.memboost = memboost_features(*store_, query, candidate, alpha_);
    return extract_features(*schema_, in);
}

}  // namespace relrec
