#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "relrec/common.hpp"

namespace relrec {

class CorpusError : public Error {
  public:
    using Error::Error;
};

/// One pin instance of an image. Instances of the same image may carry
/// different locales; local swap relies on that.
struct PinInstance {
    std::string id;
    std::string locale;

    bool operator==(const PinInstance&) const = default;
};

/// An image-signature-aggregated pin.
struct PinRecord {
    std::string image_signature;
    std::vector<PinInstance> instances;   // sorted by id, unique ids
    std::vector<std::string> annotations; // sorted lowercase token multiset
    std::vector<double> annotation_embedding;
    std::vector<double> category_vector;
    std::vector<double> visual_embedding;
    std::string locale;
    std::uint64_t popularity = 0;

    bool operator==(const PinRecord&) const = default;

    std::vector<std::string> pin_ids() const;
    /// First instance (by id) whose locale equals `locale`, if any.
    const PinInstance* instance_in_locale(std::string_view locale) const;
};

struct Dimensions {
    std::size_t annotation = 0;
    std::size_t category = 0;
    std::size_t visual = 0;
    bool operator==(const Dimensions&) const = default;
};

class PinCorpus {
  public:
    PinCorpus() = default;

    const std::vector<PinRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const PinRecord* find(std::string_view signature) const;
    const PinRecord& at(std::string_view signature) const;
    /// Index of a signature in records(), or -1.
    std::ptrdiff_t index_of(std::string_view signature) const;

    const Dimensions& dimensions() const { return dims_; }
    std::size_t rejected() const { return rejected_; }

    bool operator==(const PinCorpus& o) const {
        return records_ == o.records_ && dims_ == o.dims_ && rejected_ == o.rejected_;
    }

  private:
    friend class PinCorpusBuilder;
    std::vector<PinRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
    Dimensions dims_;
    std::size_t rejected_ = 0;
};

/// Validates and merges records into a PinCorpus. Records sharing an image
/// signature are merged: instances and annotations are unioned, the first
/// non-zero vector of each kind is kept, popularity takes the maximum.
class PinCorpusBuilder {
  public:
    /// Returns false (and counts a reject) when the record breaks an invariant.
    /// Throws CorpusError on dimension mismatch or a pin id claimed by two images.
    bool add(PinRecord record, std::string* reason = nullptr);
    void count_reject() { ++corpus_.rejected_; }
    PinCorpus build() &&;

  private:
    PinCorpus corpus_;
    bool dims_fixed_ = false;
    std::unordered_map<std::string, std::string> instance_owner_;
};

struct Board {
    std::string board_id;
    std::vector<std::string> title_tokens;
    std::string locale;
    std::vector<std::string> pin_signatures;  // save order, no duplicates

    bool operator==(const Board&) const = default;
};

class BoardCorpus {
  public:
    BoardCorpus() = default;
    /// Keeps only signatures known to `pins`, dedups, drops empty boards.
    static BoardCorpus from_boards(std::vector<Board> boards, const PinCorpus& pins,
                                   std::size_t already_dropped = 0);

    const std::vector<Board>& boards() const { return boards_; }
    std::size_t size() const { return boards_.size(); }
    std::size_t dropped() const { return dropped_; }
    std::size_t unknown_references() const { return unknown_refs_; }
    /// Number of pins that appear on two or more boards.
    std::size_t shared_memberships() const;

    bool operator==(const BoardCorpus& o) const {
        return boards_ == o.boards_ && dropped_ == o.dropped_ && unknown_refs_ == o.unknown_refs_;
    }

  private:
    friend BoardCorpus restore_boards(const std::filesystem::path&);
    std::vector<Board> boards_;
    std::size_t dropped_ = 0;
    std::size_t unknown_refs_ = 0;
};

struct EngagementEvent {
    Action action = Action::impression;
    std::string query_signature;
    std::string result_signature;
    std::string platform;
    int rank = 0;
    std::string user_id;
    std::int64_t timestamp = 0;
    std::string session_id;
    // Optional serving annotations carried on impression events.
    std::optional<Source> source;
    double generator_score = 0.0;
    std::string tag;

    bool operator==(const EngagementEvent&) const = default;
};

struct UserContext {
    std::string gender;
    std::string country;
    std::string language;
    std::vector<std::string> recent_search_tokens;
    std::vector<std::string> recent_activity_signatures;
    std::vector<double> long_term_category_vector;

    bool operator==(const UserContext&) const = default;
};

struct SessionResult {
    std::string result_signature;
    Action best_action = Action::impression;
    int rank = 0;
    std::string platform;
    std::optional<Source> source;
    double generator_score = 0.0;

    bool operator==(const SessionResult&) const = default;
};

struct Session {
    std::string session_id;
    std::string query_signature;
    std::string user_id;
    UserContext context;
    std::int64_t timestamp = 0;  // earliest event
    std::string tag;
    std::vector<SessionResult> results;  // ascending rank

    bool operator==(const Session&) const = default;
};

/// Number of earlier engaged results kept in UserContext::recent_activity_signatures.
inline constexpr std::size_t kRecentActivityDepth = 10;

class EngagementLog {
  public:
    EngagementLog() = default;

    /// Groups events into sessions. Rejects (and counts) orphan actions,
    /// duplicate impressions or actions, and events whose query disagrees
    /// with the rest of their session.
    static EngagementLog from_events(std::vector<EngagementEvent> events,
                                     std::map<std::string, UserContext> users = {},
                                     std::size_t already_rejected = 0);

    const std::vector<EngagementEvent>& events() const { return events_; }
    const std::vector<Session>& sessions() const { return sessions_; }
    const std::map<std::string, UserContext>& users() const { return users_; }
    std::size_t rejected() const { return rejected_; }
    std::int64_t min_timestamp() const;
    std::int64_t max_timestamp() const;

    bool operator==(const EngagementLog& o) const {
        return events_ == o.events_ && sessions_ == o.sessions_ && users_ == o.users_ &&
               rejected_ == o.rejected_;
    }

  private:
    friend EngagementLog restore_engagement(const std::filesystem::path&);
    std::vector<EngagementEvent> events_;
    std::vector<Session> sessions_;
    std::map<std::string, UserContext> users_;
    std::size_t rejected_ = 0;
};

// JSON-Lines ingestion. Malformed lines are counted, never fatal.
PinCorpus load_pins(const std::filesystem::path& path);
BoardCorpus load_boards(const std::filesystem::path& path, const PinCorpus& pins);
std::map<std::string, UserContext> load_users(const std::filesystem::path& path);
EngagementLog load_engagement(const std::filesystem::path& path,
                              const std::map<std::string, UserContext>& users = {});

// Snapshots: canonical JSON documents; restore(snapshot(x)) == x.
void snapshot(const PinCorpus& corpus, const std::filesystem::path& path);
void snapshot(const BoardCorpus& corpus, const std::filesystem::path& path);
void snapshot(const EngagementLog& log, const std::filesystem::path& path);
PinCorpus restore_pins(const std::filesystem::path& path);
BoardCorpus restore_boards(const std::filesystem::path& path);
EngagementLog restore_engagement(const std::filesystem::path& path);

// JSON-Lines writers in the ingestion format.
void write_pins_jsonl(const PinCorpus& pins, const std::filesystem::path& path);
void write_boards_jsonl(const std::vector<Board>& boards, const std::filesystem::path& path);
void write_events_jsonl(const std::vector<EngagementEvent>& events, const std::filesystem::path& path);
void write_users_jsonl(const std::map<std::string, UserContext>& users,
                       const std::filesystem::path& path);
std::string event_to_json_line(const EngagementEvent& e);

/// The three corpora plus user data, as written by `relrec ingest`.
struct Dataset {
    PinCorpus pins;
    BoardCorpus boards;
    EngagementLog log;
};

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace relrec
