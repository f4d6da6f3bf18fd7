#include "efshap/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "efshap/common.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

void Hyperparams::validate() const {
    if (n_trees < 0) throw ConfigError("n_trees must be >= 0");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0,1]");
    for (auto [name, v] : {std::pair{"subsample", subsample},
                           {"col_sample_by_tree", col_sample_by_tree},
                           {"col_sample_by_level", col_sample_by_level}}) {
        if (!(v > 0.0 && v <= 1.0)) {
            throw ConfigError(std::string(name) + " must lie in (0,1]");
        }
    }
    if (min_child_weight < 0.0) throw ConfigError("min_child_weight must be >= 0");
    if (reg_alpha < 0.0 || reg_lambda < 0.0 || gamma < 0.0) {
        throw ConfigError("reg_alpha, reg_lambda, gamma must be >= 0");
    }
}

Hyperparams hyperparams_from_json(const std::string& text) {
    const json j = json::parse(text);
    Hyperparams hp;
    hp.n_trees = j.value("n_trees", hp.n_trees);
    if (j.contains("num_boost_round")) {
        // Accepted as an alias of n_trees; n_trees wins when both are given.
        if (!j.contains("n_trees")) hp.n_trees = j.at("num_boost_round").get<int>();
    }
    hp.max_depth = j.value("max_depth", hp.max_depth);
    hp.eta = j.value("eta", hp.eta);
    hp.min_child_weight = j.value("min_child_weight", hp.min_child_weight);
    hp.col_sample_by_tree = j.value("col_sample_by_tree", hp.col_sample_by_tree);
    hp.col_sample_by_level = j.value("col_sample_by_level", hp.col_sample_by_level);
    hp.subsample = j.value("subsample", hp.subsample);
    hp.reg_alpha = j.value("reg_alpha", hp.reg_alpha);
    hp.reg_lambda = j.value("reg_lambda", hp.reg_lambda);
    hp.gamma = j.value("gamma", hp.gamma);
    hp.seed = j.value("seed", hp.seed);
    hp.validate();
    return hp;
}

Hyperparams hyperparams_from_json_file(const std::filesystem::path& path) {
    try {
        return hyperparams_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad hyperparams " + path.string() + ": " + e.what());
    }
}

double Tree::route(std::span<const double> values, std::span<const std::uint8_t> present) const {
    int n = 0;
    for (;;) {
        const TreeNode& node = nodes[static_cast<std::size_t>(n)];
        if (node.is_leaf()) return node.weight;
        const std::size_t f = static_cast<std::size_t>(node.feature_id);
        if (present[f] == 0) {
            n = node.default_left ? node.left : node.right;
        } else {
            n = values[f] < node.threshold ? node.left : node.right;
        }
    }
}

double Tree::expected_value() const {
    if (nodes.empty()) return 0.0;
    // Bottom-up cover-weighted mean; children are stored after their parent.
    std::vector<double> mean(nodes.size(), 0.0);
    for (std::size_t i = nodes.size(); i-- > 0;) {
        const TreeNode& node = nodes[i];
        if (node.is_leaf()) {
            mean[i] = node.weight;
        } else {
            const double cl = nodes[static_cast<std::size_t>(node.left)].cover;
            const double cr = nodes[static_cast<std::size_t>(node.right)].cover;
            mean[i] = (cl * mean[static_cast<std::size_t>(node.left)] +
                       cr * mean[static_cast<std::size_t>(node.right)]) /
                      (cl + cr);
        }
    }
    return mean[0];
}

int Tree::max_depth() const {
    std::vector<int> depth(nodes.size(), 0);
    int deepest = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const TreeNode& node = nodes[i];
        if (node.is_leaf()) continue;
        depth[static_cast<std::size_t>(node.left)] = depth[i] + 1;
        depth[static_cast<std::size_t>(node.right)] = depth[i] + 1;
        deepest = std::max(deepest, depth[i] + 1);
    }
    return deepest;
}

namespace {

double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

struct SplitCandidate {
    double gain = 0.0;
    int feature_id = -1;
    double threshold = 0.0;
    bool default_left = false;
    bool valid = false;

    // Deterministic total order: higher gain wins, then lower feature id,
    // then lower threshold.
    bool beats(const SplitCandidate& other) const {
        if (!valid) return false;
        if (!other.valid) return true;
        if (gain != other.gain) return gain > other.gain;
        if (feature_id != other.feature_id) return feature_id < other.feature_id;
        return threshold < other.threshold;
    }
};

struct NodeStats {
    double G = 0.0;
    double H = 0.0;
    int depth = 0;
    int node_index = -1;  // into the output tree
};

struct ScanState {
    double G = 0.0;
    double H = 0.0;
    double prev_value = 0.0;
    bool has_prev = false;
    double G_nm = 0.0;  // totals over non-missing rows of the feature
    double H_nm = 0.0;
    SplitCandidate best;
};

}  // namespace

GbtModel train(const CaseMatrix& data, const Hyperparams& hp) {
    hp.validate();
    const std::size_t n = data.n_cases();
    const std::size_t m = data.n_features();
    if (n < 2) throw ContractError("training needs at least 2 cases");
    {
        bool any_present = false;
        for (std::size_t j = 0; j < m && !any_present; ++j) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!data.is_missing(i, j)) {
                    any_present = true;
                    break;
                }
            }
        }
        if (!any_present) throw ContractError("training needs at least one non-missing column");
    }

    GbtModel model;
    model.eta = hp.eta;
    model.catalog_fingerprint = data.catalog().fingerprint();
    model.n_features = m;

    double label_sum = 0.0;
    for (double y : data.labels()) label_sum += y;
    model.base_score = label_sum / static_cast<double>(n);

    // Column index: per feature, non-missing rows sorted by value (row id
    // breaks value ties so the scan order is total).
    std::vector<std::vector<std::pair<double, std::uint32_t>>> columns(m);
    for (std::size_t j = 0; j < m; ++j) {
        auto& col = columns[j];
        for (std::size_t i = 0; i < n; ++i) {
            if (!data.is_missing(i, j)) col.push_back({data.raw(i, j), static_cast<std::uint32_t>(i)});
        }
        std::sort(col.begin(), col.end());
    }

    std::vector<double> pred(n, model.base_score);
    std::vector<double> grad(n, 0.0);
    std::vector<std::int32_t> node_of(n);  // -1 = row not in this tree

    const double lambda = hp.reg_lambda;
    const double alpha = hp.reg_alpha;
    auto leaf_weight = [&](double G, double H) { return -hp.eta * soft_threshold(G, alpha) / (H + lambda); };
    auto score = [&](double G, double H) {
        const double s = soft_threshold(G, alpha);
        return s * s / (H + lambda);
    };

    for (int t = 0; t < hp.n_trees; ++t) {
        Rng rng(derive_seed(hp.seed, static_cast<std::uint64_t>(t)));

        // Row subsample (per row, in row order) and per-tree column sample.
        std::size_t n_sampled = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool in = hp.subsample >= 1.0 || rng.uniform() < hp.subsample;
            node_of[i] = in ? 0 : -1;
            if (in) ++n_sampled;
        }
        if (n_sampled == 0) continue;
        std::vector<std::size_t> tree_features;
        if (hp.col_sample_by_tree >= 1.0) {
            tree_features.resize(m);
            for (std::size_t j = 0; j < m; ++j) tree_features[j] = j;
        } else {
            const std::size_t k = std::max<std::size_t>(
                1, static_cast<std::size_t>(std::ceil(hp.col_sample_by_tree * static_cast<double>(m))));
            tree_features = rng.sample_indices(m, k);
        }

        NodeStats root;
        for (std::size_t i = 0; i < n; ++i) {
            if (node_of[i] < 0) continue;
            grad[i] = pred[i] - data.labels()[i];
            root.G += grad[i];
            root.H += 1.0;
        }

        Tree tree;
        tree.nodes.push_back(TreeNode{});
        tree.nodes[0].cover = root.H;
        root.node_index = 0;

        std::vector<NodeStats> level{root};
        std::vector<std::int32_t> level_slot(1, 0);  // node_of value -> slot in `level`

        for (int depth = 0; depth < hp.max_depth && !level.empty(); ++depth) {
            std::vector<std::size_t> level_features = tree_features;
            if (hp.col_sample_by_level < 1.0) {
                const std::size_t k = std::max<std::size_t>(
                    1, static_cast<std::size_t>(
                           std::ceil(hp.col_sample_by_level * static_cast<double>(tree_features.size()))));
                const auto picks = rng.sample_indices(tree_features.size(), k);
                std::vector<std::size_t> subset;
                subset.reserve(picks.size());
                for (std::size_t p : picks) subset.push_back(tree_features[p]);
                level_features = std::move(subset);
            }

            std::vector<SplitCandidate> best(level.size());
            std::vector<ScanState> states(level.size());

            for (std::size_t f : level_features) {
                const auto& col = columns[f];
                for (auto& st : states) st = ScanState{};
                // Pass 1: per-node totals over the feature's non-missing rows.
                for (const auto& [v, r] : col) {
                    const std::int32_t nd = node_of[r];
                    if (nd < 0) continue;
                    const std::int32_t slot = level_slot[static_cast<std::size_t>(nd)];
                    if (slot < 0) continue;
                    states[static_cast<std::size_t>(slot)].G_nm += grad[r];
                    states[static_cast<std::size_t>(slot)].H_nm += 1.0;
                }
                // Pass 2: prefix scan proposing a candidate at every boundary
                // between distinct values, missing rows assigned to the side
                // that maximizes gain.
                for (const auto& [v, r] : col) {
                    const std::int32_t nd = node_of[r];
                    if (nd < 0) continue;
                    const std::int32_t slot_i = level_slot[static_cast<std::size_t>(nd)];
                    if (slot_i < 0) continue;
                    ScanState& st = states[static_cast<std::size_t>(slot_i)];
                    const NodeStats& ns = level[static_cast<std::size_t>(slot_i)];
                    if (st.has_prev && v != st.prev_value) {
                        const double mid = (st.prev_value + v) / 2.0;
                        const double thr = mid > st.prev_value ? mid : v;
                        const double g_miss = ns.G - st.G_nm;
                        const double h_miss = ns.H - st.H_nm;
                        const double base = score(ns.G, ns.H);
                        for (const bool missing_left : {true, false}) {
                            const double GL = st.G + (missing_left ? g_miss : 0.0);
                            const double HL = st.H + (missing_left ? h_miss : 0.0);
                            const double GR = ns.G - GL;
                            const double HR = ns.H - HL;
                            if (HL < hp.min_child_weight || HR < hp.min_child_weight) continue;
                            const double gain = 0.5 * (score(GL, HL) + score(GR, HR) - base) - hp.gamma;
                            if (gain <= 0.0) continue;
                            SplitCandidate cand{gain, static_cast<int>(f), thr, missing_left, true};
                            if (cand.beats(st.best)) st.best = cand;
                        }
                    }
                    st.G += grad[r];
                    st.H += 1.0;
                    st.prev_value = v;
                    st.has_prev = true;
                }
                for (std::size_t s = 0; s < level.size(); ++s) {
                    if (states[s].best.beats(best[s])) best[s] = states[s].best;
                }
            }

            // Materialize accepted splits and re-partition rows.
            std::vector<NodeStats> next_level;
            for (std::size_t s = 0; s < level.size(); ++s) {
                if (!best[s].valid) continue;
                TreeNode& parent = tree.nodes[static_cast<std::size_t>(level[s].node_index)];
                parent.feature_id = best[s].feature_id;
                parent.threshold = best[s].threshold;
                parent.default_left = best[s].default_left;
                parent.left = static_cast<int>(tree.nodes.size());
                parent.right = static_cast<int>(tree.nodes.size() + 1);
                tree.nodes.push_back(TreeNode{});
                tree.nodes.push_back(TreeNode{});

                NodeStats left, right;
                left.depth = right.depth = level[s].depth + 1;
                left.node_index = parent.left;
                right.node_index = parent.right;
                next_level.push_back(left);
                next_level.push_back(right);
            }
            if (next_level.empty()) break;

            level_slot.assign(tree.nodes.size(), -1);
            std::vector<std::int32_t> split_of(tree.nodes.size(), -1);
            std::size_t cursor = 0;
            for (std::size_t s = 0; s < level.size(); ++s) {
                if (!best[s].valid) continue;
                split_of[static_cast<std::size_t>(level[s].node_index)] = static_cast<std::int32_t>(s);
                level_slot[static_cast<std::size_t>(tree.nodes[static_cast<std::size_t>(level[s].node_index)]
                                                        .left)] = static_cast<std::int32_t>(cursor++);
                level_slot[static_cast<std::size_t>(tree.nodes[static_cast<std::size_t>(level[s].node_index)]
                                                        .right)] = static_cast<std::int32_t>(cursor++);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const std::int32_t nd = node_of[i];
                if (nd < 0) continue;
                const std::int32_t s = split_of[static_cast<std::size_t>(nd)];
                if (s < 0) {
                    node_of[i] = -2 - nd;  // parked in a finished leaf; restored below
                    continue;
                }
                const TreeNode& parent = tree.nodes[static_cast<std::size_t>(level[static_cast<std::size_t>(s)].node_index)];
                const std::size_t f = static_cast<std::size_t>(parent.feature_id);
                bool go_left;
                if (data.is_missing(i, f)) {
                    go_left = parent.default_left;
                } else {
                    go_left = data.raw(i, f) < parent.threshold;
                }
                const int child = go_left ? parent.left : parent.right;
                node_of[i] = child;
                NodeStats& cs = next_level[static_cast<std::size_t>(level_slot[static_cast<std::size_t>(child)])];
                cs.G += grad[i];
                cs.H += 1.0;
            }
            for (NodeStats& ns : next_level) {
                tree.nodes[static_cast<std::size_t>(ns.node_index)].cover = ns.H;
            }
            level = std::move(next_level);
        }

        // Finalize leaves. Rows parked with the -2 - nd encoding belong to
        // nodes that stopped splitting; decode for the per-row update below.
        for (std::size_t i = 0; i < n; ++i) {
            if (node_of[i] < -1) node_of[i] = -2 - node_of[i];
        }
        // Any node without children is a leaf; recompute G/H per leaf from
        // the final assignment to set weights.
        std::vector<double> leaf_G(tree.nodes.size(), 0.0);
        std::vector<double> leaf_H(tree.nodes.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::int32_t nd = node_of[i];
            if (nd < 0) continue;
            leaf_G[static_cast<std::size_t>(nd)] += grad[i];
            leaf_H[static_cast<std::size_t>(nd)] += 1.0;
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            TreeNode& node = tree.nodes[k];
            if (!node.is_leaf()) continue;
            node.weight = leaf_weight(leaf_G[k], leaf_H[k]);
        }

        if (tree.nodes.size() == 1 && tree.nodes[0].weight == 0.0) {
            continue;  // contributes nothing; constant labels grow zero trees
        }

        for (std::size_t i = 0; i < n; ++i) {
            pred[i] += tree.route(data.row_values(i), data.row_present(i));
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

double predict_row(const GbtModel& model, std::span<const double> values,
                   std::span<const std::uint8_t> present) {
    if (values.size() != model.n_features || present.size() != model.n_features) {
        throw ContractError("feature row width " + std::to_string(values.size()) +
                            " != model width " + std::to_string(model.n_features));
    }
    double out = model.base_score;
    for (const Tree& tree : model.trees) out += tree.route(values, present);
    return out;
}

double predict(const GbtModel& model, const CaseMatrix& data, std::size_t row) {
    return predict_row(model, data.row_values(row), data.row_present(row));
}

double predict(const GbtModel& model, const std::vector<std::optional<double>>& row) {
    std::vector<double> values(row.size(), 0.0);
    std::vector<std::uint8_t> present(row.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) {
            values[j] = *row[j];
            present[j] = 1;
        }
    }
    return predict_row(model, values, present);
}

std::vector<double> predict_all(const GbtModel& model, const CaseMatrix& data, int threads) {
    std::vector<double> out(data.n_cases());
    parallel_for(data.n_cases(), threads,
                 [&](std::size_t i) { out[i] = predict(model, data, i); });
    return out;
}

std::vector<double> coverage_importance(const GbtModel& model, const CaseMatrix& data) {
    const std::size_t m = data.n_features();
    if (model.n_features != m) throw ContractError("model and data disagree on feature count");
    std::vector<double> hits(m, 0.0);
    if (model.trees.empty() || data.n_cases() == 0) return hits;

    std::vector<std::uint32_t> seen_epoch(m, 0);
    std::uint32_t epoch = 0;
    for (std::size_t i = 0; i < data.n_cases(); ++i) {
        const auto values = data.row_values(i);
        const auto present = data.row_present(i);
        for (const Tree& tree : model.trees) {
            ++epoch;
            int nidx = 0;
            for (;;) {
                const TreeNode& node = tree.nodes[static_cast<std::size_t>(nidx)];
                if (node.is_leaf()) break;
                const std::size_t f = static_cast<std::size_t>(node.feature_id);
                if (seen_epoch[f] != epoch) {
                    seen_epoch[f] = epoch;
                    hits[f] += 1.0;
                }
                nidx = present[f] == 0 ? (node.default_left ? node.left : node.right)
                                       : (values[f] < node.threshold ? node.left : node.right);
            }
        }
    }
    const double denom = static_cast<double>(data.n_cases()) * static_cast<double>(model.trees.size());
    for (double& h : hits) h /= denom;
    return hits;
}

std::vector<ImportanceEntry> coverage_report(const GbtModel& model, const CaseMatrix& data,
                                             double threshold) {
    const std::vector<double> cov = coverage_importance(model, data);
    std::vector<ImportanceEntry> out;
    for (std::size_t f = 0; f < cov.size(); ++f) {
        if (cov[f] >= threshold) out.push_back({static_cast<int>(f), cov[f]});
    }
    std::sort(out.begin(), out.end(), [](const ImportanceEntry& a, const ImportanceEntry& b) {
        if (a.coverage != b.coverage) return a.coverage > b.coverage;
        return a.feature_id < b.feature_id;
    });
    return out;
}

EvalReport evaluate_predictions(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size()) throw ContractError("prediction/label length mismatch");
    const std::size_t n = predicted.size();
    if (n < 2) throw ContractError("evaluation needs at least 2 cases");

    EvalReport report;
    report.n = n;
    double sq = 0.0, mp = 0.0, ma = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = predicted[i] - actual[i];
        sq += d * d;
        mp += predicted[i];
        ma += actual[i];
    }
    report.rmse = std::sqrt(sq / static_cast<double>(n));
    mp /= static_cast<double>(n);
    ma /= static_cast<double>(n);

    double spp = 0.0, saa = 0.0, spa = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dp = predicted[i] - mp;
        const double da = actual[i] - ma;
        spp += dp * dp;
        saa += da * da;
        spa += dp * da;
    }
    if (spp > 0.0 && saa > 0.0) {
        const double r = spa / std::sqrt(spp * saa);
        report.pearson_r = r;
        report.r2 = r * r;
    }
    return report;
}

EvalReport evaluate(const GbtModel& model, const CaseMatrix& data) {
    const std::vector<double> pred = predict_all(model, data);
    return evaluate_predictions(pred, data.labels());
}

// ------------------------------ serialization ------------------------------

std::string model_to_json(const GbtModel& model) {
    json trees = json::array();
    for (const Tree& tree : model.trees) {
        json nodes = json::array();
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf()) {
                nodes.push_back({{"leaf", node.weight}, {"cover", node.cover}});
            } else {
                nodes.push_back({{"feature", node.feature_id},
                                 {"threshold", node.threshold},
                                 {"default_left", node.default_left},
                                 {"left", node.left},
                                 {"right", node.right},
                                 {"cover", node.cover}});
            }
        }
        trees.push_back({{"nodes", nodes}});
    }
    return json{{"version", 1},
                {"base_score", model.base_score},
                {"eta", model.eta},
                {"catalog_fingerprint", model.catalog_fingerprint},
                {"n_features", model.n_features},
                {"trees", trees}}
               .dump(2) +
           "\n";
}

GbtModel model_from_json(const std::string& text) {
    const json j = json::parse(text);
    GbtModel model;
    model.base_score = j.at("base_score").get<double>();
    model.eta = j.at("eta").get<double>();
    model.catalog_fingerprint = j.at("catalog_fingerprint").get<std::string>();
    model.n_features = j.at("n_features").get<std::size_t>();
    for (const auto& jt : j.at("trees")) {
        Tree tree;
        for (const auto& jn : jt.at("nodes")) {
            TreeNode node;
            node.cover = jn.at("cover").get<double>();
            if (jn.contains("leaf")) {
                node.weight = jn.at("leaf").get<double>();
            } else {
                node.feature_id = jn.at("feature").get<int>();
                node.threshold = jn.at("threshold").get<double>();
                node.default_left = jn.at("default_left").get<bool>();
                node.left = jn.at("left").get<int>();
                node.right = jn.at("right").get<int>();
            }
            tree.nodes.push_back(node);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

void save_model(const std::filesystem::path& path, const GbtModel& model) {
    write_text_file(path, model_to_json(model));
}

GbtModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad model file " + path.string() + ": " + e.what());
    }
}

void save_eval_report(const std::filesystem::path& path, const EvalReport& report) {
    json j{{"version", 1}, {"rmse", report.rmse}, {"n", report.n}};
    j["r2"] = report.r2 ? json(*report.r2) : json(nullptr);
    j["pearson_r"] = report.pearson_r ? json(*report.pearson_r) : json(nullptr);
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace efshap
