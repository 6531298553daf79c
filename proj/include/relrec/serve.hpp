#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "relrec/common.hpp"
#include "relrec/corpus.hpp"
#include "relrec/features.hpp"
#include "relrec/memboost.hpp"
#include "relrec/ranking.hpp"
#include "relrec/supplemental.hpp"

namespace relrec {

// ---------------------------------------------------------------------------
// sharding

/// Inclusive range of signature hashes.
struct ShardRange {
    std::uint64_t lo = 0;
    std::uint64_t hi = ~std::uint64_t{0};

    bool contains(std::uint64_t h) const { return lo <= h && h <= hi; }
    bool operator==(const ShardRange&) const = default;
};

/// "A:B" with A and B in hex (an optional 0x prefix is accepted).
ShardRange parse_range(std::string_view text);
std::string to_string(const ShardRange& r);

inline std::uint64_t signature_hash(std::string_view signature) { return stable_hash64(signature); }

struct LeafAddress {
    std::string id;
    ShardRange range;
    std::string url;  // http://host:port; empty for in-process leaves

    bool operator==(const LeafAddress&) const = default;
};

class ShardMap {
  public:
    /// Throws Error unless the ranges partition the whole hash space.
    explicit ShardMap(std::vector<LeafAddress> leaves);
    /// n leaves "leaf0".."leaf<n-1>" over equal ranges.
    static ShardMap even(std::size_t n);

    const std::vector<LeafAddress>& leaves() const { return leaves_; }
    std::size_t leaf_of(std::string_view signature) const;

  private:
    std::vector<LeafAddress> leaves_;  // ascending ranges
};

/// {"leaves": [{"id": "leaf0", "range": "0:7fffffffffffffff", "url": "http://127.0.0.1:9001"}, ...]}
ShardMap parse_shard_map(std::string_view json_text);
std::string shard_map_to_json(const ShardMap& map);

// ---------------------------------------------------------------------------
// wire types

struct MemboostFragment {
    std::string result;
    MemboostStats stats;

    bool operator==(const MemboostFragment&) const = default;
};

/// Everything a leaf needs to score its candidates: signatures and context,
/// never candidate raw data.
struct RankRequest {
    std::string query;
    UserContext user;
    std::vector<CandidateEntry> candidates;
    std::vector<MemboostFragment> memboost;  // this query's statistics for the candidates
    std::size_t top_k = 10;
    int deadline_ms = 100;

    bool operator==(const RankRequest&) const = default;
};

struct RankResponse {
    std::string leaf;
    std::vector<ScoredResult> results;     // score order, at most top_k
    std::vector<std::string> unknown;      // owned but missing from the pin store
    std::vector<std::string> not_owned;    // routed here by mistake; never scored
    double elapsed_ms = 0.0;

    bool operator==(const RankResponse&) const = default;
};

std::string rank_request_to_json(const RankRequest& r);
RankRequest rank_request_from_json(std::string_view text);
std::string rank_response_to_json(const RankResponse& r);
RankResponse rank_response_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// leaf

/// Scores the candidates it owns with the deployed model. The pin store is
/// read-only and shared; the model can be replaced between requests.
class Leaf {
  public:
    Leaf(std::string id, ShardRange range, std::shared_ptr<const PinCorpus> pins,
         std::shared_ptr<const RankingModel> model = nullptr, FeatureConfig features = {},
         double memboost_alpha = 1.0);

    const std::string& id() const { return id_; }
    const ShardRange& range() const { return range_; }
    bool owns(std::string_view signature) const { return range_.contains(signature_hash(signature)); }

    /// Throws Error when no model is deployed.
    RankResponse rank(const RankRequest& request) const;

    void set_model(std::shared_ptr<const RankingModel> model);
    std::shared_ptr<const RankingModel> model() const;

  private:
    std::string id_;
    ShardRange range_;
    std::shared_ptr<const PinCorpus> pins_;
    FeatureSchema schema_;
    double alpha_;
    mutable std::mutex model_mu_;
    std::shared_ptr<const RankingModel> model_;
};

class LeafClient {
  public:
    virtual ~LeafClient() = default;
    virtual RankResponse rank(const RankRequest& request) = 0;
};

/// Calls the leaf directly, after an optional artificial delay.
std::shared_ptr<LeafClient> local_leaf_client(std::shared_ptr<const Leaf> leaf,
                                              std::chrono::milliseconds delay = std::chrono::milliseconds(0));
/// POSTs to <url>/leaf/rank.
std::shared_ptr<LeafClient> http_leaf_client(std::string url);

// ---------------------------------------------------------------------------
// pipeline

/// Candidate sets from every source for a query.
using CandidateSource = std::function<std::vector<CandidateSet>(std::string_view query, const UserContext& user)>;

/// Precomputed candidate sets per query, one JSON line per set:
/// {"query": q, "status": "ok", "entries": [{"signature": s, "source": "walk", "score": x}, ...]}
using CandidateTable = std::map<std::string, std::vector<CandidateSet>, std::less<>>;
CandidateTable load_candidate_table(const std::filesystem::path& path);
void write_candidate_table(const CandidateTable& table, const std::filesystem::path& path);
CandidateSource table_source(std::shared_ptr<const CandidateTable> table);

struct PipelineConfig {
    BlendPolicy blend = BlendPolicy::single(Source::board_cooc);
    std::size_t candidate_budget = 200;
    MemboostParams memboost;
    bool memboost_boost = true;   // requires a store
    bool memboost_insert = true;  // requires a store
    bool local_swap = true;       // requires a pin store at the root
    double unbiased_fraction = 0.0;
    std::uint64_t seed = 0;
    int deadline_ms = 100;
};

struct RelatedRequest {
    std::string query;
    std::string user_id;
    UserContext user;
    std::size_t top_k = 10;
    std::string platform = "web";
    std::string session_id;
    std::int64_t timestamp = 0;
};

struct LeafTiming {
    std::string leaf;
    double ms = 0.0;
    std::size_t candidates = 0;
    bool timed_out = false;
    std::string error;
};

struct RelatedResponse {
    std::string query;
    std::vector<ServedResult> results;
    std::vector<double> generator_scores;  // parallel to results; 0 for memboost insertions
    std::string tag;       // "ranked" or "unbiased"
    bool partial = false;  // a leaf missed the deadline or failed
    std::string reason;    // why the result is empty, when it is
    std::vector<LeafTiming> leaves;
    std::vector<std::string> unknown;  // candidates no leaf could score
};

std::string related_response_to_json(const RelatedResponse& r);

/// Impressions for a served response, in the events.jsonl format, tagged
/// with the response's tag.
std::vector<EngagementEvent> serve_log_events(const RelatedRequest& request, const RelatedResponse& response);

using LogSink = std::function<void(const std::vector<EngagementEvent>&)>;
/// Appends event lines to a file; safe to call from several threads.
LogSink file_log_sink(const std::filesystem::path& path);

/// Shared by the root and the single-process reference.
struct PipelineState {
    CandidateSource candidates;
    std::shared_ptr<const PinCorpus> pins;        // for local_swap; may be null
    std::shared_ptr<const MemboostStore> store;   // may be null
    PipelineConfig config;
};

/// blend -> scatter to owning leaves -> per-leaf top-k -> merge to global
/// top-k -> memboost score -> memboost insertion -> local swap.
class Root {
  public:
    Root(ShardMap shards, std::vector<std::shared_ptr<LeafClient>> leaves, PipelineState state);

    RelatedResponse related(const RelatedRequest& request) const;
    void set_log_sink(LogSink sink) { sink_ = std::move(sink); }
    const PipelineState& state() const { return state_; }

  private:
    ShardMap shards_;
    std::vector<std::shared_ptr<LeafClient>> leaves_;
    PipelineState state_;
    LogSink sink_;
};

/// The same pipeline scored in one process by one featurizer.
RelatedResponse related_reference(const PipelineState& state, const PinCorpus& pins, const RankingModel& model,
                                  const RelatedRequest& request, FeatureConfig features = {});

// ---------------------------------------------------------------------------
// HTTP

/// POST /leaf/rank, POST /leaf/model (hot swap), GET /health.
class LeafServer {
  public:
    explicit LeafServer(std::shared_ptr<Leaf> leaf);
    ~LeafServer();
    /// Binds to host:port (0 picks a free port) and returns the port.
    int bind(const std::string& host, int port);
    /// Blocks until stop().
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// GET /related/{sig}?user=U&k=K[&platform=P&session=S&ts=T], GET /health.
class RootServer {
  public:
    RootServer(std::shared_ptr<const Root> root, std::map<std::string, UserContext> users = {});
    ~RootServer();
    int bind(const std::string& host, int port);
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// POSTs the model to every leaf of the map that has a URL.
void deploy_model(const ShardMap& shards, const RankingModel& model);

}  // namespace relrec
