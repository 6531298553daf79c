#include "relrec/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace relrec {

using nlohmann::json;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_finite(const ExampleSet& data) {
    for (const auto& r : data.rows) {
        if (!all_finite(r.features)) throw std::invalid_argument("training data has non-finite features");
        if (!std::isfinite(r.weight) || r.weight < 0.0) throw std::invalid_argument("training data has a bad weight");
    }
}

ExampleSet::Row make_row(FeatureVector fv, Action best, const std::string& session, const std::string& sig, int rank) {
    ExampleSet::Row row;
    row.features = std::move(fv.values);
    row.best_action = best;
    row.label = best == Action::save ? 1.0 : 0.0;
    row.session_id = session;
    row.signature = sig;
    row.rank_shown = rank;
    return row;
}

void apply_class_weight(ExampleSet& data, double positive_class_weight) {
    double pos = 0, neg = 0;
    for (const auto& r : data.rows) (r.label > 0.5 ? pos : neg) += 1.0;
    double w = positive_class_weight;
    if (w <= 0.0) w = pos > 0.0 && neg > 0.0 ? neg / pos : 1.0;
    for (auto& r : data.rows) r.weight = r.label > 0.5 ? w : 1.0;
}

json tree_to_json(const RegressionTree& t) {
    json nodes = json::array();
    for (const auto& n : t.nodes) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    return nodes;
}

RegressionTree tree_from_json(const json& j) {
    RegressionTree t;
    for (const auto& n : j) {
        RegressionTree::Node node;
        node.feature = n.at(0).get<int>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<int>();
        node.right = n.at(3).get<int>();
        node.value = n.at(4).get<double>();
        t.nodes.push_back(node);
    }
    const int size = static_cast<int>(t.nodes.size());
    for (const auto& n : t.nodes) {
        if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size))
            throw Error("model file: malformed tree");
    }
    return t;
}

// ---------------------------------------------------------------------------
// tree growing

struct TreeGrower {
    const ExampleSet& data;
    const std::vector<std::vector<std::uint32_t>>& sorted;  // per feature, row indices by value
    const std::vector<std::vector<double>>& sorted_values;  // per feature, values in that order
    const std::vector<char>& constant;                      // features with a single value never split
    const GbdtParams& params;

    RegressionTree grow(const std::vector<double>& target, const std::vector<double>& hess,
                        const std::vector<char>& in_sample) const {
        const std::size_t n = data.rows.size();
        const std::size_t dim = data.dim();
        const std::size_t min_leaf = std::max<std::size_t>(params.min_leaf, 1);

        struct Stats {
            double sum_t = 0, sum_h = 0;
            std::size_t count = 0;
        };
        RegressionTree tree;
        std::vector<Stats> stats(1);
        tree.nodes.emplace_back();
        std::vector<int> node_of(n, -1);
        for (std::size_t i = 0; i < n; ++i) {
            if (!in_sample[i]) continue;
            node_of[i] = 0;
            stats[0].sum_t += target[i];
            stats[0].sum_h += hess[i];
            ++stats[0].count;
        }

        std::vector<int> frontier = {0};
        for (std::size_t depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
            std::vector<int> slot_of(tree.nodes.size(), -1);
            for (std::size_t s = 0; s < frontier.size(); ++s) slot_of[frontier[s]] = static_cast<int>(s);

            struct Best {
                bool found = false;
                double gain = 0;
                int feature = -1;
                double threshold = 0;
            };
            std::vector<Best> best(frontier.size());
            struct Running {
                double sum_t = 0;
                std::size_t count = 0;
                double last = 0;
                bool has_last = false;
            };
            std::vector<Running> run(frontier.size());
            for (std::size_t f = 0; f < dim; ++f) {
                if (constant[f]) continue;
                std::fill(run.begin(), run.end(), Running{});
                const auto& order = sorted[f];
                const auto& values = sorted_values[f];
                for (std::size_t j = 0; j < n; ++j) {
                    const auto i = order[j];
                    int node = node_of[i];
                    if (node < 0 || slot_of[node] < 0) continue;
                    const int s = slot_of[node];
                    const double v = values[j];
                    auto& r = run[s];
                    const Stats& st = stats[node];
                    if (r.has_last && v != r.last && r.count >= min_leaf && st.count - r.count >= min_leaf) {
                        const double nl = static_cast<double>(r.count);
                        const double nr = static_cast<double>(st.count - r.count);
                        const double gr = st.sum_t - r.sum_t;
                        const double gain = r.sum_t * r.sum_t / nl + gr * gr / nr -
                                            st.sum_t * st.sum_t / static_cast<double>(st.count);
                        if ((!best[s].found && gain >= -1e-9) || (best[s].found && gain > best[s].gain + 1e-12)) {
                            double t = r.last + (v - r.last) / 2.0;
                            if (!(t < v)) t = r.last;
                            best[s] = {true, gain, static_cast<int>(f), t};
                        }
                    }
                    r.sum_t += target[i];
                    ++r.count;
                    r.last = v;
                    r.has_last = true;
                }
            }

            std::vector<int> next;
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                if (!best[s].found) continue;
                const int node = frontier[s];
                const int left = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                stats.resize(tree.nodes.size());
                tree.nodes[node].feature = best[s].feature;
                tree.nodes[node].threshold = best[s].threshold;
                tree.nodes[node].left = left;
                tree.nodes[node].right = left + 1;
                next.push_back(left);
                next.push_back(left + 1);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const int node = node_of[i];
                if (node < 0) continue;
                const auto& nd = tree.nodes[node];
                if (nd.feature < 0) continue;
                const int child = data.rows[i].features[nd.feature] <= nd.threshold ? nd.left : nd.right;
                node_of[i] = child;
                stats[child].sum_t += target[i];
                stats[child].sum_h += hess[i];
                ++stats[child].count;
            }
            frontier = std::move(next);
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            if (tree.nodes[k].feature >= 0) continue;
            const auto& st = stats[k];
            tree.nodes[k].value = st.count == 0 ? 0.0 : st.sum_t / (st.sum_h + params.leaf_l2);
        }
        return tree;
    }
};

}  // namespace

void ExampleSet::append(const ExampleSet& other) {
    if (!rows.empty() && !other.rows.empty() && fingerprint != other.fingerprint)
        throw SchemaMismatch("appending examples from a different feature schema");
    if (rows.empty()) {
        fingerprint = other.fingerprint;
        feature_names = other.feature_names;
    }
    const auto offset = static_cast<std::uint32_t>(rows.size());
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    for (auto p : other.pairs) pairs.push_back({p.preferred + offset, p.other + offset, p.weight});
    skipped += other.skipped;
}

// ---------------------------------------------------------------------------
// data collection

std::vector<std::size_t> trimmed_positions(const Session& session) {
    std::vector<char> keep(session.results.size(), 0);
    for (std::size_t i = 0; i < session.results.size(); ++i) {
        if (session.results[i].best_action == Action::impression) continue;
        for (std::size_t back = 0; back <= 2 && back <= i; ++back) keep[i - back] = 1;
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) out.push_back(i);
    }
    return out;
}

ExampleSet collect_session_data(const EngagementLog& log, const Featurizer& featurizer, SessionMode mode,
                                double positive_class_weight) {
    ExampleSet data;
    data.fingerprint = featurizer.schema().fingerprint();
    data.feature_names = featurizer.schema().names();
    for (const auto& session : log.sessions()) {
        std::vector<std::uint32_t> session_rows;
        for (std::size_t pos : trimmed_positions(session)) {
            const auto& r = session.results[pos];
            auto fv = featurizer.features(session.query_signature, session.context, r.result_signature, r.source,
                                          r.generator_score);
            if (!fv) {
                ++data.skipped;
                continue;
            }
            session_rows.push_back(static_cast<std::uint32_t>(data.rows.size()));
            data.rows.push_back(make_row(std::move(*fv), r.best_action, session.session_id, r.result_signature, r.rank));
        }
        if (mode != SessionMode::pairs) continue;
        for (auto a : session_rows) {
            for (auto b : session_rows) {
                if (data.rows[a].best_action > data.rows[b].best_action) data.pairs.push_back({a, b, 1.0});
            }
        }
    }
    if (mode == SessionMode::pointwise) apply_class_weight(data, positive_class_weight);
    return data;
}

ExampleSet collect_memboost_pairs(const MemboostStore& store, const Featurizer& featurizer,
                                  const MemboostParams& params, std::uint64_t seed) {
    ExampleSet data;
    data.fingerprint = featurizer.schema().fingerprint();
    data.feature_names = featurizer.schema().names();
    const auto& recs = featurizer.pins().records();
    std::vector<double> cumulative;
    double total = 0.0;
    for (const auto& r : recs) {
        total += static_cast<double>(std::max<std::uint64_t>(r.popularity, 1));
        cumulative.push_back(total);
    }
    const UserContext no_user;

    std::vector<std::string> queries;
    for (const auto& r : store.records()) {
        if (queries.empty() || queries.back() != r.query) queries.push_back(r.query);
    }
    for (const auto& query : queries) {
        if (featurizer.pins().find(query) == nullptr) continue;
        std::vector<std::pair<double, std::string>> scored;
        for (const auto& rec : store.for_query(query)) {
            if (rec.result == query || featurizer.pins().find(rec.result) == nullptr) continue;
            scored.emplace_back(mb_score(rec.stats, params), rec.result);
        }
        if (scored.empty()) continue;
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const std::string& top = scored.front().second;
        const std::string& bottom = scored.back().second;

        Rng rng(derive_seed(seed, query));
        std::optional<std::string> random_pin;
        const bool any_other = std::any_of(recs.begin(), recs.end(), [&](const PinRecord& r) {
            return r.image_signature != top && r.image_signature != bottom && r.image_signature != query;
        });
        if (any_other) {
            for (int attempt = 0; attempt < 1000 && !random_pin; ++attempt) {
                auto it = std::upper_bound(cumulative.begin(), cumulative.end(), rng.uniform() * total);
                if (it == cumulative.end()) --it;
                const auto& sig = recs[static_cast<std::size_t>(it - cumulative.begin())].image_signature;
                if (sig != top && sig != bottom && sig != query) random_pin = sig;
            }
        }

        auto add_row = [&](const std::string& sig) -> std::optional<std::uint32_t> {
            auto fv = featurizer.features(query, no_user, sig, std::nullopt, 0.0);
            if (!fv) return std::nullopt;
            data.rows.push_back(make_row(std::move(*fv), Action::impression, query, sig, 0));
            return static_cast<std::uint32_t>(data.rows.size() - 1);
        };
        auto bottom_row = add_row(bottom);
        if (top != bottom) {
            auto top_row = add_row(top);
            data.pairs.push_back({*top_row, *bottom_row, 1.0});
        }
        if (random_pin) {
            auto rand_row = add_row(*random_pin);
            data.pairs.push_back({*bottom_row, *rand_row, 1.0});
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// models

double RegressionTree::predict(std::span<const double> x) const {
    if (nodes.empty()) return 0.0;
    std::size_t k = 0;
    while (nodes[k].feature >= 0) {
        k = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[k].feature)] <= nodes[k].threshold ? nodes[k].left
                                                                                                        : nodes[k].right);
    }
    return nodes[k].value;
}

std::string_view to_string(Objective o) {
    switch (o) {
        case Objective::ranksvm: return "ranksvm";
        case Objective::ranknet: return "ranknet";
        case Objective::logistic: return "logistic";
    }
    return "?";
}

Objective parse_objective(std::string_view s) {
    if (s == "ranksvm") return Objective::ranksvm;
    if (s == "ranknet") return Objective::ranknet;
    if (s == "logistic") return Objective::logistic;
    throw Error("unknown objective: " + std::string(s));
}

double RankingModel::score_raw(std::span<const double> x) const {
    if (const auto* lin = std::get_if<LinearModel>(&model)) {
        if (x.size() != lin->weights.size()) throw SchemaMismatch("feature dimension differs from the model");
        return dot(lin->weights, x);
    }
    const auto& g = std::get<GbdtModel>(model);
    double s = 0.0;
    for (const auto& t : g.trees) s += t.predict(x);
    return g.shrinkage * s;
}

double RankingModel::score(const FeatureVector& fv) const {
    if (fv.fingerprint != fingerprint) throw SchemaMismatch("feature schema fingerprint differs from the model");
    return score_raw(fv.values);
}

std::string model_to_json(const RankingModel& m) {
    json j;
    j["format"] = "relrec-model";
    j["version"] = 1;
    j["objective"] = std::string(to_string(m.objective));
    j["fingerprint"] = m.fingerprint;
    j["feature_names"] = m.feature_names;
    j["metadata"] = m.metadata;
    if (const auto* lin = std::get_if<LinearModel>(&m.model)) {
        j["variant"] = "linear";
        j["weights"] = lin->weights;
    } else {
        const auto& g = std::get<GbdtModel>(m.model);
        j["variant"] = "gbdt";
        j["shrinkage"] = g.shrinkage;
        json trees = json::array();
        for (const auto& t : g.trees) trees.push_back(tree_to_json(t));
        j["trees"] = trees;
    }
    return j.dump();
}

RankingModel model_from_json(std::string_view text) {
    RankingModel m;
    try {
        auto j = json::parse(text);
        if (j.value("format", "") != "relrec-model") throw Error("not a model file");
        if (j.value("version", 0) != 1) throw Error("unsupported model version");
        m.objective = parse_objective(j.at("objective").get<std::string>());
        m.fingerprint = j.at("fingerprint").get<std::uint64_t>();
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
        const auto variant = j.at("variant").get<std::string>();
        if (variant == "linear") {
            m.model = LinearModel{j.at("weights").get<std::vector<double>>()};
        } else if (variant == "gbdt") {
            GbdtModel g;
            g.shrinkage = j.at("shrinkage").get<double>();
            for (const auto& t : j.at("trees")) g.trees.push_back(tree_from_json(t));
            m.model = std::move(g);
        } else {
            throw Error("unknown model variant: " + variant);
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad model file: ") + e.what());
    }
    return m;
}

void save_model(const RankingModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << model_to_json(model) << '\n';
}

RankingModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// training

double pairwise_hinge_loss(const ExampleSet& data, std::span<const double> w) {
    if (data.pairs.empty()) return 0.0;
    double loss = 0.0;
    for (const auto& p : data.pairs) {
        double margin = dot(w, data.rows[p.preferred].features) - dot(w, data.rows[p.other].features);
        loss += p.weight * std::max(0.0, 1.0 - margin);
    }
    return loss / static_cast<double>(data.pairs.size());
}

RankingModel train_linear(const ExampleSet& data, const LinearParams& params) {
    if (data.pairs.empty()) throw std::invalid_argument("train_linear: no pairs");
    if (!(params.C > 0.0)) throw std::invalid_argument("train_linear: C must be positive");
    check_finite(data);
    const std::size_t dim = data.dim();
    const std::size_t m = data.pairs.size();

    std::vector<double> z(m * dim);
    std::vector<double> qii(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& a = data.rows[data.pairs[i].preferred].features;
        const auto& b = data.rows[data.pairs[i].other].features;
        for (std::size_t k = 0; k < dim; ++k) z[i * dim + k] = a[k] - b[k];
        qii[i] = dot(std::span(z.data() + i * dim, dim), std::span(z.data() + i * dim, dim));
    }
    std::vector<double> w(dim, 0.0), alpha(m, 0.0);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(params.seed);
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        rng.shuffle(order);
        double max_violation = 0.0;
        for (std::size_t i : order) {
            if (qii[i] <= 0.0) continue;
            std::span<const double> zi(z.data() + i * dim, dim);
            const double upper = params.C * data.pairs[i].weight;
            const double g = dot(w, zi) - 1.0;
            double pg = g;
            if (alpha[i] <= 0.0) pg = std::min(g, 0.0);
            else if (alpha[i] >= upper) pg = std::max(g, 0.0);
            max_violation = std::max(max_violation, std::abs(pg));
            if (std::abs(pg) < 1e-12) continue;
            const double next = std::clamp(alpha[i] - g / qii[i], 0.0, upper);
            const double delta = next - alpha[i];
            alpha[i] = next;
            for (std::size_t k = 0; k < dim; ++k) w[k] += delta * zi[k];
        }
        if (max_violation < 1e-7) break;
    }
    RankingModel model;
    model.model = LinearModel{std::move(w)};
    model.objective = Objective::ranksvm;
    model.fingerprint = data.fingerprint;
    model.feature_names = data.feature_names;
    model.metadata["C"] = std::to_string(params.C);
    model.metadata["pairs"] = std::to_string(m);
    return model;
}

RankingModel train_gbdt(const ExampleSet& data, Objective objective, const GbdtParams& params) {
    if (data.rows.empty()) throw std::invalid_argument("train_gbdt: no examples");
    if (objective == Objective::ranksvm) throw std::invalid_argument("train_gbdt: ranksvm is a linear objective");
    if (objective == Objective::ranknet && data.pairs.empty()) throw std::invalid_argument("train_gbdt: no pairs");
    if (!(params.subsample > 0.0 && params.subsample <= 1.0)) throw std::invalid_argument("train_gbdt: bad subsample");
    check_finite(data);
    const std::size_t n = data.rows.size();
    const std::size_t dim = data.dim();

    std::vector<std::vector<std::uint32_t>> sorted(dim, std::vector<std::uint32_t>(n));
    std::vector<std::vector<double>> sorted_values(dim, std::vector<double>(n));
    std::vector<char> constant(dim, 0);
    for (std::size_t f = 0; f < dim; ++f) {
        std::vector<double> column(n);
        for (std::size_t i = 0; i < n; ++i) column[i] = data.rows[i].features[f];
        std::iota(sorted[f].begin(), sorted[f].end(), 0);
        std::stable_sort(sorted[f].begin(), sorted[f].end(),
                         [&](std::uint32_t a, std::uint32_t b) { return column[a] < column[b]; });
        for (std::size_t j = 0; j < n; ++j) sorted_values[f][j] = column[sorted[f][j]];
        constant[f] = sorted_values[f].front() == sorted_values[f].back();
    }
    TreeGrower grower{data, sorted, sorted_values, constant, params};

    GbdtModel g;
    g.shrinkage = params.shrinkage;
    std::vector<double> F(n, 0.0), target(n), hess(n);
    std::vector<char> in_sample(n, 1);
    for (std::size_t t = 0; t < params.num_trees; ++t) {
        std::fill(target.begin(), target.end(), 0.0);
        std::fill(hess.begin(), hess.end(), 0.0);
        if (objective == Objective::logistic) {
            for (std::size_t i = 0; i < n; ++i) {
                const double p = sigmoid(F[i]);
                const double w = data.rows[i].weight;
                target[i] = w * (data.rows[i].label - p);
                hess[i] = w * p * (1.0 - p);
            }
        } else {
            for (const auto& pr : data.pairs) {
                const double rho = sigmoid(F[pr.other] - F[pr.preferred]);
                target[pr.preferred] += pr.weight * rho;
                target[pr.other] -= pr.weight * rho;
                hess[pr.preferred] += pr.weight * rho * (1.0 - rho);
                hess[pr.other] += pr.weight * rho * (1.0 - rho);
            }
        }
        if (params.subsample < 1.0) {
            Rng rng(derive_seed(params.seed, t));
            std::size_t kept = 0;
            for (std::size_t i = 0; i < n; ++i) kept += (in_sample[i] = rng.bernoulli(params.subsample) ? 1 : 0);
            if (kept == 0) std::fill(in_sample.begin(), in_sample.end(), 1);
        }
        auto tree = grower.grow(target, hess, in_sample);
        for (std::size_t i = 0; i < n; ++i) F[i] += params.shrinkage * tree.predict(data.rows[i].features);
        g.trees.push_back(std::move(tree));
    }

    RankingModel model;
    model.model = std::move(g);
    model.objective = objective;
    model.fingerprint = data.fingerprint;
    model.feature_names = data.feature_names;
    model.metadata["num_trees"] = std::to_string(params.num_trees);
    model.metadata["max_depth"] = std::to_string(params.max_depth);
    model.metadata["rows"] = std::to_string(n);
    return model;
}

RankingModel train_model(const ExampleSet& data, const HyperParams& hp) {
    if (hp.variant == HyperParams::Variant::linear) return train_linear(data, hp.linear);
    if (hp.objective == Objective::logistic) {
        ExampleSet weighted = data;
        apply_class_weight(weighted, hp.positive_class_weight);
        return train_gbdt(weighted, hp.objective, hp.gbdt);
    }
    return train_gbdt(data, hp.objective, hp.gbdt);
}

// ---------------------------------------------------------------------------
// ranking

std::vector<ScoredResult> rank(const RankingModel& model, const Featurizer& featurizer, std::string_view query,
                               const UserContext& user, const std::vector<CandidateEntry>& candidates) {
    std::vector<ScoredResult> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        auto fv = featurizer.features(query, user, c.signature, c.source, c.generator_score);
        if (!fv) continue;
        out.push_back({c.signature, c.source, c.generator_score, model.score(*fv), false});
    }
    sort_by_score(out);
    return out;
}

// ---------------------------------------------------------------------------
// tuning

namespace {

void set_param(HyperParams& hp, const std::string& name, double v) {
    if (name == "num_trees") hp.gbdt.num_trees = static_cast<std::size_t>(v);
    else if (name == "max_depth") hp.gbdt.max_depth = static_cast<std::size_t>(v);
    else if (name == "min_leaf") hp.gbdt.min_leaf = static_cast<std::size_t>(v);
    else if (name == "shrinkage") hp.gbdt.shrinkage = v;
    else if (name == "subsample") hp.gbdt.subsample = v;
    else if (name == "C") hp.linear.C = v;
    else if (name == "epochs") hp.linear.epochs = static_cast<std::size_t>(v);
    else if (name == "positive_class_weight") hp.positive_class_weight = v;
    else throw Error("unknown hyperparameter: " + name);
}

bool is_integer_param(const std::string& name) {
    return name == "num_trees" || name == "max_depth" || name == "min_leaf" || name == "epochs";
}

bool is_log_param(const std::string& name) {
    return name == "shrinkage" || name == "C" || name == "positive_class_weight";
}

void read_common(HyperParams& hp, const json& j) {
    if (j.contains("variant")) {
        auto v = j["variant"].get<std::string>();
        if (v == "linear") hp.variant = HyperParams::Variant::linear;
        else if (v == "gbdt") hp.variant = HyperParams::Variant::gbdt;
        else throw Error("unknown variant: " + v);
    }
    if (j.contains("objective")) hp.objective = parse_objective(j["objective"].get<std::string>());
    if (j.contains("seed")) {
        hp.gbdt.seed = j["seed"].get<std::uint64_t>();
        hp.linear.seed = hp.gbdt.seed;
    }
}

}  // namespace

HyperSpace parse_hyper_space(std::string_view json_text) {
    HyperSpace space;
    try {
        auto j = json::parse(json_text);
        read_common(space.base, j);
        for (const auto& [name, value] : j.items()) {
            if (name == "variant" || name == "objective" || name == "seed") continue;
            if (value.is_number()) {
                set_param(space.base, name, value.get<double>());
            } else if (value.is_array() && value.size() == 2) {
                set_param(space.base, name, value[0].get<double>());  // validates the name
                HyperSpace::Range r{value[0].get<double>(), value[1].get<double>(), is_log_param(name),
                                    is_integer_param(name)};
                if (!(r.lo <= r.hi) || (r.log_scale && r.lo <= 0.0)) throw Error("bad range for " + name);
                space.ranges[name] = r;
            } else {
                throw Error("hyperparameter " + name + " must be a number or a [lo, hi] pair");
            }
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad hyperparameter space: ") + e.what());
    }
    return space;
}

std::string hyper_params_to_json(const HyperParams& hp) {
    json j;
    j["variant"] = hp.variant == HyperParams::Variant::linear ? "linear" : "gbdt";
    j["objective"] = std::string(to_string(hp.objective));
    j["num_trees"] = hp.gbdt.num_trees;
    j["max_depth"] = hp.gbdt.max_depth;
    j["min_leaf"] = hp.gbdt.min_leaf;
    j["shrinkage"] = hp.gbdt.shrinkage;
    j["subsample"] = hp.gbdt.subsample;
    j["C"] = hp.linear.C;
    j["epochs"] = hp.linear.epochs;
    j["positive_class_weight"] = hp.positive_class_weight;
    j["seed"] = hp.gbdt.seed;
    return j.dump();
}

HyperParams hyper_params_from_json(std::string_view json_text) {
    HyperParams hp;
    try {
        auto j = json::parse(json_text);
        read_common(hp, j);
        for (const auto& [name, value] : j.items()) {
            if (name == "variant" || name == "objective" || name == "seed") continue;
            if (!value.is_number()) continue;  // other sections of a larger config
            set_param(hp, name, value.get<double>());
        }
    } catch (const json::exception& e) {
        throw Error(std::string("bad hyperparameters: ") + e.what());
    }
    return hp;
}

std::vector<HyperParams> sample_trials(const HyperSpace& space, std::size_t trials, std::uint64_t seed) {
    std::vector<HyperParams> out;
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        HyperParams hp = space.base;
        for (const auto& [name, r] : space.ranges) {
            double u = rng.uniform();
            double v = r.log_scale ? std::exp(std::log(r.lo) + u * (std::log(r.hi) - std::log(r.lo)))
                                   : r.lo + u * (r.hi - r.lo);
            if (r.integer) v = std::floor(r.lo + u * (r.hi - r.lo + 1.0));
            set_param(hp, name, std::clamp(v, r.lo, r.hi));
        }
        out.push_back(hp);
    }
    return out;
}

TuneResult tune(const HyperSpace& space, const std::function<double(const HyperParams&)>& evaluate,
                std::size_t trials, unsigned parallelism, std::uint64_t seed) {
    if (trials == 0) throw std::invalid_argument("tune: at least one trial required");
    auto candidates = sample_trials(space, trials, seed);
    TuneResult result;
    result.trial_scores.assign(trials, 0.0);
    parallel_for(trials, parallelism, [&](std::size_t i) { result.trial_scores[i] = evaluate(candidates[i]); });
    result.best_trial = 0;
    for (std::size_t i = 1; i < trials; ++i) {
        const double best = result.trial_scores[result.best_trial];
        if (result.trial_scores[i] > best || (std::isnan(best) && !std::isnan(result.trial_scores[i])))
            result.best_trial = i;
    }
    result.best = candidates[result.best_trial];
    result.best_score = result.trial_scores[result.best_trial];
    return result;
}

}  // namespace relrec
