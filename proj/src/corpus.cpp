#include "relrec/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace relrec {

using nlohmann::json;

namespace {

std::string lowercase(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

bool all_zero(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

/// Multiset union: each token appears max(count_a, count_b) times.
std::vector<std::string> multiset_union(const std::vector<std::string>& a,
                                        const std::vector<std::string>& b) {
    std::vector<std::string> out;
    out.reserve(std::max(a.size(), b.size()));
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i] < b[j])) {
            out.push_back(a[i++]);
        } else if (i == a.size() || b[j] < a[i]) {
            out.push_back(b[j++]);
        } else {
            out.push_back(a[i]);
            ++i;
            ++j;
        }
    }
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path.string());
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot write " + path.string());
    return out;
}

std::vector<double> number_array(const json& j, const char* key) {
    const json& a = j.at(key);
    if (!a.is_array()) throw std::invalid_argument(std::string(key) + " is not an array");
    std::vector<double> v;
    v.reserve(a.size());
    for (const auto& x : a) {
        if (!x.is_number()) throw std::invalid_argument(std::string(key) + " has a non-number");
        v.push_back(x.get<double>());
    }
    return v;
}

std::vector<std::string> string_array(const json& j, const char* key) {
    const json& a = j.at(key);
    if (!a.is_array()) throw std::invalid_argument(std::string(key) + " is not an array");
    std::vector<std::string> v;
    v.reserve(a.size());
    for (const auto& x : a) v.push_back(x.get<std::string>());
    return v;
}

std::string required_string(const json& j, const char* key) {
    auto s = j.at(key).get<std::string>();
    if (s.empty()) throw std::invalid_argument(std::string(key) + " is empty");
    return s;
}

// --- JSON (de)serialization of the domain types, shared by the JSONL
// readers/writers and the snapshot format.

json pin_to_json(const PinRecord& p) {
    json ids = json::array();
    for (const auto& inst : p.instances) ids.push_back(inst.id);
    json j = {{"sig", p.image_signature},
              {"pin_ids", ids},
              {"annotations", p.annotations},
              {"ann_emb", p.annotation_embedding},
              {"cat_vec", p.category_vector},
              {"vis_emb", p.visual_embedding},
              {"locale", p.locale},
              {"popularity", p.popularity}};
    // Instance locales only need spelling out when they differ from the record locale.
    bool mixed = std::any_of(p.instances.begin(), p.instances.end(),
                             [&](const PinInstance& i) { return i.locale != p.locale; });
    if (mixed) {
        json locs = json::array();
        for (const auto& inst : p.instances) locs.push_back(inst.locale);
        j["pin_locales"] = locs;
    }
    return j;
}

PinRecord pin_from_json(const json& j) {
    PinRecord p;
    p.image_signature = required_string(j, "sig");
    auto ids = string_array(j, "pin_ids");
    p.locale = j.value("locale", std::string{});
    std::vector<std::string> locales;
    if (j.contains("pin_locales")) {
        locales = string_array(j, "pin_locales");
        if (locales.size() != ids.size()) throw std::invalid_argument("pin_locales size mismatch");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i].empty()) throw std::invalid_argument("empty pin id");
        p.instances.push_back({ids[i], locales.empty() ? p.locale : locales[i]});
    }
    if (j.contains("annotations")) {
        for (auto& t : string_array(j, "annotations")) p.annotations.push_back(lowercase(std::move(t)));
    }
    p.annotation_embedding = number_array(j, "ann_emb");
    p.category_vector = number_array(j, "cat_vec");
    p.visual_embedding = number_array(j, "vis_emb");
    if (j.contains("popularity")) {
        const json& pop = j.at("popularity");
        if (!pop.is_number_integer() || pop.get<std::int64_t>() < 0)
            throw std::invalid_argument("popularity must be a non-negative integer");
        p.popularity = pop.get<std::uint64_t>();
    }
    return p;
}

json board_to_json(const Board& b) {
    return {{"board_id", b.board_id},
            {"title", b.title_tokens},
            {"locale", b.locale},
            {"pins", b.pin_signatures}};
}

Board board_from_json(const json& j) {
    Board b;
    b.board_id = required_string(j, "board_id");
    if (j.contains("title")) {
        for (auto& t : string_array(j, "title")) b.title_tokens.push_back(lowercase(std::move(t)));
    }
    b.locale = j.value("locale", std::string{});
    b.pin_signatures = string_array(j, "pins");
    return b;
}

json event_to_json(const EngagementEvent& e) {
    json j = {{"session", e.session_id},
              {"user", e.user_id},
              {"query", e.query_signature},
              {"result", e.result_signature},
              {"action", std::string(to_string(e.action))},
              {"platform", e.platform},
              {"rank", e.rank},
              {"ts", e.timestamp}};
    if (e.source) {
        j["source"] = std::string(to_string(*e.source));
        j["gen_score"] = e.generator_score;
    }
    if (!e.tag.empty()) j["tag"] = e.tag;
    return j;
}

EngagementEvent event_from_json(const json& j) {
    EngagementEvent e;
    e.session_id = required_string(j, "session");
    e.user_id = required_string(j, "user");
    e.query_signature = required_string(j, "query");
    e.result_signature = required_string(j, "result");
    e.action = parse_action(j.at("action").get<std::string>());
    e.platform = required_string(j, "platform");
    const json& rank = j.at("rank");
    if (!rank.is_number_integer() || rank.get<std::int64_t>() < 0)
        throw std::invalid_argument("rank must be a non-negative integer");
    e.rank = rank.get<int>();
    const json& ts = j.at("ts");
    if (!ts.is_number_integer()) throw std::invalid_argument("ts must be an integer");
    e.timestamp = ts.get<std::int64_t>();
    if (j.contains("source")) {
        e.source = parse_source(j.at("source").get<std::string>());
        e.generator_score = j.value("gen_score", 0.0);
    }
    e.tag = j.value("tag", std::string{});
    return e;
}

json user_to_json(const std::string& id, const UserContext& u) {
    return {{"user", id},
            {"gender", u.gender},
            {"country", u.country},
            {"language", u.language},
            {"recent_search", u.recent_search_tokens},
            {"recent_activity", u.recent_activity_signatures},
            {"long_term_cat", u.long_term_category_vector}};
}

UserContext user_from_json(const json& j) {
    UserContext u;
    u.gender = j.value("gender", std::string{});
    u.country = j.value("country", std::string{});
    u.language = j.value("language", std::string{});
    if (j.contains("recent_search")) {
        for (auto& t : string_array(j, "recent_search")) u.recent_search_tokens.push_back(lowercase(std::move(t)));
    }
    if (j.contains("recent_activity")) u.recent_activity_signatures = string_array(j, "recent_activity");
    if (j.contains("long_term_cat")) u.long_term_category_vector = number_array(j, "long_term_cat");
    return u;
}

json session_to_json(const Session& s) {
    json results = json::array();
    for (const auto& r : s.results) {
        json jr = {{"result", r.result_signature},
                   {"best", std::string(to_string(r.best_action))},
                   {"rank", r.rank},
                   {"platform", r.platform},
                   {"gen_score", r.generator_score}};
        if (r.source) jr["source"] = std::string(to_string(*r.source));
        results.push_back(std::move(jr));
    }
    json ctx = user_to_json(s.user_id, s.context);
    ctx.erase("user");
    return {{"session", s.session_id}, {"query", s.query_signature}, {"user", s.user_id},
            {"ts", s.timestamp},       {"tag", s.tag},               {"context", ctx},
            {"results", results}};
}

Session session_from_json(const json& j) {
    Session s;
    s.session_id = j.at("session").get<std::string>();
    s.query_signature = j.at("query").get<std::string>();
    s.user_id = j.at("user").get<std::string>();
    s.timestamp = j.at("ts").get<std::int64_t>();
    s.tag = j.at("tag").get<std::string>();
    s.context = user_from_json(j.at("context"));
    for (const auto& jr : j.at("results")) {
        SessionResult r;
        r.result_signature = jr.at("result").get<std::string>();
        r.best_action = parse_action(jr.at("best").get<std::string>());
        r.rank = jr.at("rank").get<int>();
        r.platform = jr.at("platform").get<std::string>();
        r.generator_score = jr.at("gen_score").get<double>();
        if (jr.contains("source")) r.source = parse_source(jr.at("source").get<std::string>());
        s.results.push_back(std::move(r));
    }
    return s;
}

json read_document(const std::filesystem::path& path, std::string_view kind) {
    auto in = open_input(path);
    json doc = json::parse(in);
    if (doc.value("format", std::string{}) != "relrec-snapshot" || doc.value("version", 0) != 1)
        throw CorpusError(path.string() + ": not a relrec snapshot (version 1)");
    if (doc.value("kind", std::string{}) != kind)
        throw CorpusError(path.string() + ": snapshot kind is not " + std::string(kind));
    return doc;
}

void write_document(const json& doc, const std::filesystem::path& path) {
    auto out = open_output(path);
    out << doc.dump() << '\n';
    if (!out) throw CorpusError("write failed: " + path.string());
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
    auto in = open_input(path);
    std::string line;
    while (std::getline(in, line)) {
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
            continue;
        fn(line);
    }
    if (in.bad()) throw CorpusError("read failed: " + path.string());
}

}  // namespace

// ---------------------------------------------------------------------------
// PinRecord / PinCorpus

std::vector<std::string> PinRecord::pin_ids() const {
    std::vector<std::string> ids;
    ids.reserve(instances.size());
    for (const auto& i : instances) ids.push_back(i.id);
    return ids;
}

const PinInstance* PinRecord::instance_in_locale(std::string_view loc) const {
    for (const auto& i : instances) {
        if (i.locale == loc) return &i;
    }
    return nullptr;
}

const PinRecord* PinCorpus::find(std::string_view signature) const {
    auto it = index_.find(std::string(signature));
    return it == index_.end() ? nullptr : &records_[it->second];
}

const PinRecord& PinCorpus::at(std::string_view signature) const {
    const PinRecord* p = find(signature);
    if (p == nullptr) throw CorpusError("unknown image signature: " + std::string(signature));
    return *p;
}

std::ptrdiff_t PinCorpus::index_of(std::string_view signature) const {
    auto it = index_.find(std::string(signature));
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

bool PinCorpusBuilder::add(PinRecord rec, std::string* reason) {
    auto reject = [&](const char* why) {
        if (reason != nullptr) *reason = why;
        ++corpus_.rejected_;
        return false;
    };
    if (rec.image_signature.empty()) return reject("empty image signature");
    if (rec.instances.empty()) return reject("no pin ids");
    if (!all_finite(rec.annotation_embedding) || !all_finite(rec.category_vector) ||
        !all_finite(rec.visual_embedding))
        return reject("non-finite vector entry");
    double cat_sum = 0.0;
    for (double x : rec.category_vector) {
        if (x < 0.0) return reject("negative category weight");
        cat_sum += x;
    }
    if (cat_sum != 0.0 && std::abs(cat_sum - 1.0) > 1e-6) return reject("category vector does not sum to 1");
    double ann_norm = l2_norm(rec.annotation_embedding);
    if (ann_norm != 0.0 && std::abs(ann_norm - 1.0) > 1e-3) return reject("annotation embedding is not unit-norm");

    Dimensions d{rec.annotation_embedding.size(), rec.category_vector.size(), rec.visual_embedding.size()};
    if (!dims_fixed_) {
        corpus_.dims_ = d;
        dims_fixed_ = true;
    } else if (d != corpus_.dims_) {
        throw CorpusError("dimension mismatch for " + rec.image_signature);
    }

    for (auto& t : rec.annotations) t = lowercase(std::move(t));
    std::sort(rec.annotations.begin(), rec.annotations.end());
    std::stable_sort(rec.instances.begin(), rec.instances.end(),
                     [](const PinInstance& a, const PinInstance& b) { return a.id < b.id; });
    rec.instances.erase(std::unique(rec.instances.begin(), rec.instances.end(),
                                    [](const PinInstance& a, const PinInstance& b) { return a.id == b.id; }),
                        rec.instances.end());

    for (const auto& inst : rec.instances) {
        auto [it, inserted] = instance_owner_.emplace(inst.id, rec.image_signature);
        if (!inserted && it->second != rec.image_signature)
            throw CorpusError("pin id " + inst.id + " claimed by two image signatures");
    }

    auto found = corpus_.index_.find(rec.image_signature);
    if (found == corpus_.index_.end()) {
        corpus_.index_.emplace(rec.image_signature, corpus_.records_.size());
        corpus_.records_.push_back(std::move(rec));
        return true;
    }

    PinRecord& cur = corpus_.records_[found->second];
    std::vector<PinInstance> merged;
    std::merge(cur.instances.begin(), cur.instances.end(), rec.instances.begin(), rec.instances.end(),
               std::back_inserter(merged),
               [](const PinInstance& a, const PinInstance& b) { return a.id < b.id; });
    merged.erase(std::unique(merged.begin(), merged.end(),
                             [](const PinInstance& a, const PinInstance& b) { return a.id == b.id; }),
                 merged.end());
    cur.instances = std::move(merged);
    cur.annotations = multiset_union(cur.annotations, rec.annotations);
    if (all_zero(cur.annotation_embedding)) cur.annotation_embedding = std::move(rec.annotation_embedding);
    if (all_zero(cur.category_vector)) cur.category_vector = std::move(rec.category_vector);
    if (all_zero(cur.visual_embedding)) cur.visual_embedding = std::move(rec.visual_embedding);
    if (cur.locale.empty()) cur.locale = rec.locale;
    cur.popularity = std::max(cur.popularity, rec.popularity);
    return true;
}

PinCorpus PinCorpusBuilder::build() && { return std::move(corpus_); }

PinCorpus load_pins(const std::filesystem::path& path) {
    PinCorpusBuilder builder;
    for_each_line(path, [&](const std::string& line) {
        PinRecord rec;
        try {
            rec = pin_from_json(json::parse(line));
        } catch (const json::exception&) {
            builder.count_reject();
            return;
        } catch (const std::invalid_argument&) {
            builder.count_reject();
            return;
        } catch (const Error&) {
            builder.count_reject();
            return;
        }
        builder.add(std::move(rec));
    });
    return std::move(builder).build();
}

// ---------------------------------------------------------------------------
// Boards

BoardCorpus BoardCorpus::from_boards(std::vector<Board> boards, const PinCorpus& pins,
                                     std::size_t already_dropped) {
    BoardCorpus out;
    out.dropped_ = already_dropped;
    // merge repeated board ids, preserving first-seen order
    std::unordered_map<std::string, std::size_t> by_id;
    std::vector<Board> merged;
    for (auto& b : boards) {
        auto it = by_id.find(b.board_id);
        if (it == by_id.end()) {
            by_id.emplace(b.board_id, merged.size());
            merged.push_back(std::move(b));
        } else {
            auto& dst = merged[it->second].pin_signatures;
            dst.insert(dst.end(), b.pin_signatures.begin(), b.pin_signatures.end());
        }
    }
    for (auto& b : merged) {
        std::vector<std::string> kept;
        std::unordered_set<std::string> seen;
        for (auto& sig : b.pin_signatures) {
            if (pins.find(sig) == nullptr) {
                ++out.unknown_refs_;
                continue;
            }
            if (seen.insert(sig).second) kept.push_back(std::move(sig));
        }
        if (kept.empty()) {
            ++out.dropped_;
            continue;
        }
        b.pin_signatures = std::move(kept);
        out.boards_.push_back(std::move(b));
    }
    return out;
}

std::size_t BoardCorpus::shared_memberships() const {
    std::unordered_map<std::string_view, int> count;
    for (const auto& b : boards_) {
        for (const auto& s : b.pin_signatures) ++count[s];
    }
    return static_cast<std::size_t>(
        std::count_if(count.begin(), count.end(), [](const auto& kv) { return kv.second >= 2; }));
}

BoardCorpus load_boards(const std::filesystem::path& path, const PinCorpus& pins) {
    std::vector<Board> boards;
    std::size_t malformed = 0;
    for_each_line(path, [&](const std::string& line) {
        try {
            boards.push_back(board_from_json(json::parse(line)));
        } catch (const json::exception&) {
            ++malformed;
        } catch (const std::invalid_argument&) {
            ++malformed;
        } catch (const Error&) {
            ++malformed;
        }
    });
    return BoardCorpus::from_boards(std::move(boards), pins, malformed);
}

// ---------------------------------------------------------------------------
// Users and engagement

std::map<std::string, UserContext> load_users(const std::filesystem::path& path) {
    std::map<std::string, UserContext> users;
    for_each_line(path, [&](const std::string& line) {
        try {
            json j = json::parse(line);
            std::string id = required_string(j, "user");
            users.emplace(std::move(id), user_from_json(j));
        } catch (const json::exception&) {
        } catch (const std::invalid_argument&) {
        }
    });
    return users;
}

EngagementLog EngagementLog::from_events(std::vector<EngagementEvent> events,
                                         std::map<std::string, UserContext> users,
                                         std::size_t already_rejected) {
    EngagementLog log;
    log.rejected_ = already_rejected;
    log.users_ = std::move(users);

    struct Pending {
        std::size_t session_index;
        std::unordered_map<std::string, std::size_t> result_index;  // result -> index in results
        std::vector<std::set<Action>> seen_actions;
    };
    std::unordered_map<std::string, Pending> by_session;
    std::vector<bool> accepted(events.size(), false);

    // Impressions first so actions may precede their impression in the file.
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.action != Action::impression) continue;
        auto it = by_session.find(e.session_id);
        if (it == by_session.end()) {
            Session s;
            s.session_id = e.session_id;
            s.query_signature = e.query_signature;
            s.user_id = e.user_id;
            s.timestamp = e.timestamp;
            s.tag = e.tag;
            it = by_session.emplace(e.session_id, Pending{log.sessions_.size(), {}, {}}).first;
            log.sessions_.push_back(std::move(s));
        }
        Pending& pend = it->second;
        Session& s = log.sessions_[pend.session_index];
        if (s.query_signature != e.query_signature || s.user_id != e.user_id ||
            pend.result_index.count(e.result_signature) != 0) {
            ++log.rejected_;
            continue;
        }
        pend.result_index.emplace(e.result_signature, s.results.size());
        pend.seen_actions.emplace_back();
        s.results.push_back({e.result_signature, Action::impression, e.rank, e.platform, e.source,
                             e.generator_score});
        s.timestamp = std::min(s.timestamp, e.timestamp);
        if (s.tag.empty()) s.tag = e.tag;
        accepted[i] = true;
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (e.action == Action::impression) continue;
        auto it = by_session.find(e.session_id);
        if (it == by_session.end()) {
            ++log.rejected_;
            continue;
        }
        Pending& pend = it->second;
        Session& s = log.sessions_[pend.session_index];
        auto r = pend.result_index.find(e.result_signature);
        if (r == pend.result_index.end() || s.query_signature != e.query_signature ||
            !pend.seen_actions[r->second].insert(e.action).second) {
            ++log.rejected_;
            continue;
        }
        SessionResult& res = s.results[r->second];
        res.best_action = std::max(res.best_action, e.action);
        accepted[i] = true;
    }

    for (auto& s : log.sessions_) {
        std::stable_sort(s.results.begin(), s.results.end(), [](const SessionResult& a, const SessionResult& b) {
            if (a.rank != b.rank) return a.rank < b.rank;
            return a.result_signature < b.result_signature;
        });
        auto u = log.users_.find(s.user_id);
        if (u != log.users_.end()) s.context = u->second;
    }

    // Recent activity: engaged results from the same user's strictly earlier sessions.
    std::map<std::string, std::vector<std::size_t>> sessions_of_user;
    for (std::size_t i = 0; i < log.sessions_.size(); ++i) sessions_of_user[log.sessions_[i].user_id].push_back(i);
    for (auto& [user, idx] : sessions_of_user) {
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const auto& sa = log.sessions_[a];
            const auto& sb = log.sessions_[b];
            if (sa.timestamp != sb.timestamp) return sa.timestamp < sb.timestamp;
            return sa.session_id < sb.session_id;
        });
        std::vector<std::string> history;  // most recent last
        std::size_t k = 0;
        while (k < idx.size()) {
            std::size_t end = k;
            std::int64_t ts = log.sessions_[idx[k]].timestamp;
            while (end < idx.size() && log.sessions_[idx[end]].timestamp == ts) ++end;
            std::vector<std::string> recent(history.end() - static_cast<std::ptrdiff_t>(
                                                                std::min(history.size(), kRecentActivityDepth)),
                                            history.end());
            std::reverse(recent.begin(), recent.end());
            for (std::size_t m = k; m < end; ++m) {
                auto& ctx = log.sessions_[idx[m]].context;
                ctx.recent_activity_signatures = recent;
            }
            for (std::size_t m = k; m < end; ++m) {
                for (const auto& r : log.sessions_[idx[m]].results) {
                    if (r.best_action != Action::impression) history.push_back(r.result_signature);
                }
            }
            k = end;
        }
    }

    log.events_.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        if (accepted[i]) log.events_.push_back(std::move(events[i]));
    }
    return log;
}

std::int64_t EngagementLog::min_timestamp() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::max();
    for (const auto& e : events_) m = std::min(m, e.timestamp);
    return m;
}

std::int64_t EngagementLog::max_timestamp() const {
    std::int64_t m = std::numeric_limits<std::int64_t>::min();
    for (const auto& e : events_) m = std::max(m, e.timestamp);
    return m;
}

EngagementLog load_engagement(const std::filesystem::path& path,
                              const std::map<std::string, UserContext>& users) {
    std::vector<EngagementEvent> events;
    std::size_t malformed = 0;
    for_each_line(path, [&](const std::string& line) {
        try {
            events.push_back(event_from_json(json::parse(line)));
        } catch (const json::exception&) {
            ++malformed;
        } catch (const std::invalid_argument&) {
            ++malformed;
        } catch (const Error&) {
            ++malformed;
        }
    });
    return EngagementLog::from_events(std::move(events), users, malformed);
}

// ---------------------------------------------------------------------------
// Snapshots

void snapshot(const PinCorpus& corpus, const std::filesystem::path& path) {
    json records = json::array();
    for (const auto& r : corpus.records()) records.push_back(pin_to_json(r));
    const auto& d = corpus.dimensions();
    json doc = {{"format", "relrec-snapshot"},
                {"version", 1},
                {"kind", "pins"},
                {"rejected", corpus.rejected()},
                {"dims", {d.annotation, d.category, d.visual}},
                {"records", records}};
    write_document(doc, path);
}

void snapshot(const BoardCorpus& corpus, const std::filesystem::path& path) {
    json boards = json::array();
    for (const auto& b : corpus.boards()) boards.push_back(board_to_json(b));
    json doc = {{"format", "relrec-snapshot"},
                {"version", 1},
                {"kind", "boards"},
                {"dropped", corpus.dropped()},
                {"unknown_refs", corpus.unknown_references()},
                {"boards", boards}};
    write_document(doc, path);
}

void snapshot(const EngagementLog& log, const std::filesystem::path& path) {
    json events = json::array();
    for (const auto& e : log.events()) events.push_back(event_to_json(e));
    json sessions = json::array();
    for (const auto& s : log.sessions()) sessions.push_back(session_to_json(s));
    json users = json::array();
    for (const auto& [id, u] : log.users()) users.push_back(user_to_json(id, u));
    json doc = {{"format", "relrec-snapshot"},
                {"version", 1},
                {"kind", "engagement"},
                {"rejected", log.rejected()},
                {"events", events},
                {"sessions", sessions},
                {"users", users}};
    write_document(doc, path);
}

PinCorpus restore_pins(const std::filesystem::path& path) {
    json doc = read_document(path, "pins");
    PinCorpusBuilder builder;
    for (const auto& j : doc.at("records")) {
        if (!builder.add(pin_from_json(j))) throw CorpusError("snapshot holds an invalid record");
    }
    for (std::size_t i = 0, n = doc.at("rejected").get<std::size_t>(); i < n; ++i) builder.count_reject();
    PinCorpus out = std::move(builder).build();
    auto dims = doc.at("dims").get<std::vector<std::size_t>>();
    if (!out.empty() && (dims.size() != 3 || Dimensions{dims[0], dims[1], dims[2]} != out.dimensions()))
        throw CorpusError("snapshot dimensions disagree with its records");
    return out;
}

BoardCorpus restore_boards(const std::filesystem::path& path) {
    json doc = read_document(path, "boards");
    BoardCorpus out;
    for (const auto& j : doc.at("boards")) out.boards_.push_back(board_from_json(j));
    out.dropped_ = doc.at("dropped").get<std::size_t>();
    out.unknown_refs_ = doc.at("unknown_refs").get<std::size_t>();
    return out;
}

EngagementLog restore_engagement(const std::filesystem::path& path) {
    json doc = read_document(path, "engagement");
    EngagementLog log;
    for (const auto& j : doc.at("events")) log.events_.push_back(event_from_json(j));
    for (const auto& j : doc.at("sessions")) log.sessions_.push_back(session_from_json(j));
    for (const auto& j : doc.at("users")) log.users_.emplace(j.at("user").get<std::string>(), user_from_json(j));
    log.rejected_ = doc.at("rejected").get<std::size_t>();
    return log;
}

// ---------------------------------------------------------------------------
// JSONL writers

void write_pins_jsonl(const PinCorpus& pins, const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& r : pins.records()) out << pin_to_json(r).dump() << '\n';
}

void write_boards_jsonl(const std::vector<Board>& boards, const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& b : boards) out << board_to_json(b).dump() << '\n';
}

std::string event_to_json_line(const EngagementEvent& e) { return event_to_json(e).dump(); }

void write_events_jsonl(const std::vector<EngagementEvent>& events, const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& e : events) out << event_to_json(e).dump() << '\n';
}

void write_users_jsonl(const std::map<std::string, UserContext>& users, const std::filesystem::path& path) {
    auto out = open_output(path);
    for (const auto& [id, u] : users) {
        json j = user_to_json(id, u);
        j.erase("recent_activity");
        out << j.dump() << '\n';
    }
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    snapshot(data.pins, dir / "pins.snapshot.json");
    snapshot(data.boards, dir / "boards.snapshot.json");
    snapshot(data.log, dir / "engagement.snapshot.json");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset d;
    d.pins = restore_pins(dir / "pins.snapshot.json");
    d.boards = restore_boards(dir / "boards.snapshot.json");
    d.log = restore_engagement(dir / "engagement.snapshot.json");
    return d;
}

}  // namespace relrec
