#include "efshap/shap.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "efshap/common.hpp"
#include "efshap/csv.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

namespace {

// Weighted decision-path bookkeeping for the polynomial-time Shapley
// computation. pweight[i] is the permutation weight of subsets with i ones.
struct PathElement {
    int feature_index = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double pweight = 0.0;
};

void extend_path(PathElement* path, int unique_depth, double zero_fraction, double one_fraction,
                 int feature_index) {
    path[unique_depth] = {feature_index, zero_fraction, one_fraction,
                          unique_depth == 0 ? 1.0 : 0.0};
    for (int i = unique_depth - 1; i >= 0; --i) {
        path[i + 1].pweight +=
            one_fraction * path[i].pweight * (i + 1) / static_cast<double>(unique_depth + 1);
        path[i].pweight =
            zero_fraction * path[i].pweight * (unique_depth - i) / static_cast<double>(unique_depth + 1);
    }
}

void unwind_path(PathElement* path, int unique_depth, int path_index) {
    const double one_fraction = path[path_index].one_fraction;
    const double zero_fraction = path[path_index].zero_fraction;
    double next_one_portion = path[unique_depth].pweight;

    for (int i = unique_depth - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp = path[i].pweight;
            path[i].pweight =
                next_one_portion * (unique_depth + 1) / static_cast<double>((i + 1) * one_fraction);
            next_one_portion = tmp - path[i].pweight * zero_fraction * (unique_depth - i) /
                                         static_cast<double>(unique_depth + 1);
        } else {
            path[i].pweight = path[i].pweight * (unique_depth + 1) /
                              static_cast<double>(zero_fraction * (unique_depth - i));
        }
    }
    for (int i = path_index; i < unique_depth; ++i) {
        path[i].feature_index = path[i + 1].feature_index;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

double unwound_path_sum(const PathElement* path, int unique_depth, int path_index) {
    const double one_fraction = path[path_index].one_fraction;
    const double zero_fraction = path[path_index].zero_fraction;
    double next_one_portion = path[unique_depth].pweight;
    double total = 0.0;
    for (int i = unique_depth - 1; i >= 0; --i) {
        if (one_fraction != 0.0) {
            const double tmp =
                next_one_portion * (unique_depth + 1) / static_cast<double>((i + 1) * one_fraction);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero_fraction * (unique_depth - i) /
                                                     static_cast<double>(unique_depth + 1);
        } else if (zero_fraction != 0.0) {
            total += (path[i].pweight / zero_fraction) /
                     ((unique_depth - i) / static_cast<double>(unique_depth + 1));
        }
    }
    return total;
}

int hot_child(const TreeNode& node, std::span<const double> values,
              std::span<const std::uint8_t> present) {
    const std::size_t f = static_cast<std::size_t>(node.feature_id);
    if (present[f] == 0) return node.default_left ? node.left : node.right;
    return values[f] < node.threshold ? node.left : node.right;
}

void tree_shap_recurse(const Tree& tree, std::span<const double> values,
                       std::span<const std::uint8_t> present, double* phi, int node_index,
                       int unique_depth, PathElement* parent_path, double parent_zero_fraction,
                       double parent_one_fraction, int parent_feature_index) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_index)];

    PathElement* path = parent_path + unique_depth + 1;
    std::copy(parent_path, parent_path + unique_depth + 1, path);
    extend_path(path, unique_depth, parent_zero_fraction, parent_one_fraction,
                parent_feature_index);

    if (node.is_leaf()) {
        for (int i = 1; i <= unique_depth; ++i) {
            const double w = unwound_path_sum(path, unique_depth, i);
            const PathElement& el = path[i];
            phi[el.feature_index] += w * (el.one_fraction - el.zero_fraction) * node.weight;
        }
        return;
    }

    const int hot = hot_child(node, values, present);
    const int cold = hot == node.left ? node.right : node.left;
    const double hot_zero_fraction = tree.nodes[static_cast<std::size_t>(hot)].cover / node.cover;
    const double cold_zero_fraction = tree.nodes[static_cast<std::size_t>(cold)].cover / node.cover;
    double incoming_zero_fraction = 1.0;
    double incoming_one_fraction = 1.0;

    // A repeated split on the same feature is merged: undo the previous
    // occurrence and fold its fractions into this one.
    int path_index = 0;
    for (; path_index <= unique_depth; ++path_index) {
        if (path[path_index].feature_index == node.feature_id) break;
    }
    if (path_index != unique_depth + 1) {
        incoming_zero_fraction = path[path_index].zero_fraction;
        incoming_one_fraction = path[path_index].one_fraction;
        unwind_path(path, unique_depth, path_index);
        unique_depth -= 1;
    }

    tree_shap_recurse(tree, values, present, phi, hot, unique_depth + 1, path,
                      hot_zero_fraction * incoming_zero_fraction, incoming_one_fraction,
                      node.feature_id);
    tree_shap_recurse(tree, values, present, phi, cold, unique_depth + 1, path,
                      cold_zero_fraction * incoming_zero_fraction, 0.0, node.feature_id);
}

void check_width(const GbtModel& model, std::size_t width) {
    if (width != model.n_features) {
        throw ContractError("feature row width " + std::to_string(width) + " != model width " +
                            std::to_string(model.n_features));
    }
}

}  // namespace

ShapValues tree_shap(const GbtModel& model, std::span<const double> values,
                     std::span<const std::uint8_t> present) {
    check_width(model, values.size());
    ShapValues out;
    out.values.assign(model.n_features, 0.0);
    out.base_value = model.base_score;

    for (const Tree& tree : model.trees) {
        out.base_value += tree.expected_value();
        if (tree.nodes.size() == 1) continue;  // constant tree shifts only the base
        const int maxd = tree.max_depth() + 2;
        std::vector<PathElement> path_storage(static_cast<std::size_t>(maxd * (maxd + 1)) / 2);
        tree_shap_recurse(tree, values, present, out.values.data(), 0, 0, path_storage.data(), 1.0,
                          1.0, -1);
    }
    return out;
}

ShapValues tree_shap(const GbtModel& model, const CaseMatrix& data, std::size_t row) {
    return tree_shap(model, data.row_values(row), data.row_present(row));
}

ShapValues tree_shap(const GbtModel& model, const std::vector<std::optional<double>>& row) {
    std::vector<double> values(row.size(), 0.0);
    std::vector<std::uint8_t> present(row.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) {
            values[j] = *row[j];
            present[j] = 1;
        }
    }
    return tree_shap(model, values, present);
}

namespace {

double tree_subset_expectation(const Tree& tree, int node_index, std::span<const double> values,
                               std::span<const std::uint8_t> present, std::uint32_t subset_mask) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(node_index)];
    if (node.is_leaf()) return node.weight;
    if (subset_mask & (1u << static_cast<unsigned>(node.feature_id))) {
        return tree_subset_expectation(tree, hot_child(node, values, present), values, present,
                                       subset_mask);
    }
    const double cl = tree.nodes[static_cast<std::size_t>(node.left)].cover;
    const double cr = tree.nodes[static_cast<std::size_t>(node.right)].cover;
    return (cl * tree_subset_expectation(tree, node.left, values, present, subset_mask) +
            cr * tree_subset_expectation(tree, node.right, values, present, subset_mask)) /
           (cl + cr);
}

}  // namespace

double subset_expectation(const GbtModel& model, std::span<const double> values,
                          std::span<const std::uint8_t> present, std::uint32_t subset_mask) {
    check_width(model, values.size());
    double v = model.base_score;
    for (const Tree& tree : model.trees) {
        v += tree_subset_expectation(tree, 0, values, present, subset_mask);
    }
    return v;
}

std::vector<double> shapley_oracle(const GbtModel& model, std::span<const double> values,
                                   std::span<const std::uint8_t> present) {
    check_width(model, values.size());
    const std::size_t m = model.n_features;
    if (m > kShapleyOracleMaxFeatures) {
        throw ContractError("shapley_oracle enumerates 2^M subsets and refuses M > " +
                            std::to_string(kShapleyOracleMaxFeatures) + "; got M = " +
                            std::to_string(m));
    }

    const std::uint32_t n_masks = 1u << m;
    std::vector<double> v(n_masks);
    for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
        v[mask] = subset_expectation(model, values, present, mask);
    }

    // weight(|S|) = |S|! (M-|S|-1)! / M! = 1 / (M * C(M-1, |S|))
    std::vector<double> weight(m);
    for (std::size_t s = 0; s < m; ++s) {
        double binom = 1.0;
        for (std::size_t k = 1; k <= s; ++k) {
            binom = binom * static_cast<double>(m - 1 - s + k) / static_cast<double>(k);
        }
        weight[s] = 1.0 / (static_cast<double>(m) * binom);
    }

    std::vector<double> phi(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        const std::uint32_t bit = 1u << j;
        for (std::uint32_t mask = 0; mask < n_masks; ++mask) {
            if (mask & bit) continue;
            const unsigned s = static_cast<unsigned>(std::popcount(mask));
            phi[j] += weight[s] * (v[mask | bit] - v[mask]);
        }
    }
    return phi;
}

std::vector<double> shapley_oracle(const GbtModel& model,
                                   const std::vector<std::optional<double>>& row) {
    std::vector<double> values(row.size(), 0.0);
    std::vector<std::uint8_t> present(row.size(), 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (row[j]) {
            values[j] = *row[j];
            present[j] = 1;
        }
    }
    return shapley_oracle(model, values, present);
}

ShapMatrix explain_dataset(const GbtModel& model, const CaseMatrix& data, int threads) {
    if (model.catalog_fingerprint != data.catalog().fingerprint()) {
        throw ContractError("model was trained against a different feature catalog");
    }
    ShapMatrix out;
    out.n_features = model.n_features;
    out.case_ids = data.case_ids();
    out.values.assign(data.n_cases() * model.n_features, 0.0);

    // Base value does not depend on the case; compute once.
    out.base_value = model.base_score;
    for (const Tree& tree : model.trees) out.base_value += tree.expected_value();

    parallel_for(data.n_cases(), threads, [&](std::size_t i) {
        const ShapValues sv = tree_shap(model, data, i);
        std::copy(sv.values.begin(), sv.values.end(),
                  out.values.begin() + static_cast<std::ptrdiff_t>(i * out.n_features));
    });
    return out;
}

ShapSummary summarize(const ShapMatrix& shap, const CaseMatrix& data, std::size_t top_k) {
    if (shap.n_features != data.n_features() || shap.n_cases() != data.n_cases()) {
        throw ContractError("shap matrix and case matrix shapes disagree");
    }
    const std::size_t m = shap.n_features;
    const std::size_t n = shap.n_cases();

    ShapSummary summary;
    summary.ranking.reserve(m);
    for (std::size_t f = 0; f < m; ++f) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += std::abs(shap.at(i, f));
        summary.ranking.push_back({static_cast<int>(f), n == 0 ? 0.0 : acc / static_cast<double>(n)});
    }
    std::sort(summary.ranking.begin(), summary.ranking.end(),
              [](const ShapSummary::Entry& a, const ShapSummary::Entry& b) {
                  if (a.mean_abs_shap != b.mean_abs_shap) return a.mean_abs_shap > b.mean_abs_shap;
                  return a.feature_id < b.feature_id;
              });
    const std::size_t k = std::min(top_k, m);
    for (std::size_t r = 0; r < k; ++r) summary.top.push_back(summary.ranking[r].feature_id);

    summary.pairs.resize(m);
    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t f = static_cast<std::size_t>(summary.ranking[r].feature_id);
        auto& pairs = summary.pairs[r];
        pairs.reserve(n);
        for (std::size_t i = 0; i < n; ++i) pairs.push_back({data.cell(i, f), shap.at(i, f)});
    }
    return summary;
}

void save_shap_dir(const std::filesystem::path& dir, const ShapMatrix& shap,
                   const FeatureCatalog& catalog, const std::string& model_checksum) {
    if (catalog.size() != shap.n_features) {
        throw ContractError("catalog does not match shap matrix width");
    }
    std::filesystem::create_directories(dir);
    csv::Table t;
    t.header = {"patient_id", "echo_date"};
    for (const Feature& f : catalog.entries()) t.header.push_back(f.name);
    for (std::size_t i = 0; i < shap.n_cases(); ++i) {
        std::vector<std::string> row;
        row.reserve(shap.n_features + 2);
        row.push_back(shap.case_ids[i].patient_id);
        row.push_back(format_date(shap.case_ids[i].echo_date));
        for (std::size_t f = 0; f < shap.n_features; ++f) row.push_back(format_double(shap.at(i, f)));
        t.rows.push_back(std::move(row));
    }
    csv::write_file(dir / "shap.csv", t);
    write_text_file(dir / "shap_meta.json",
                    json{{"version", 1},
                         {"base_value", shap.base_value},
                         {"n_cases", shap.n_cases()},
                         {"n_features", shap.n_features},
                         {"catalog_fingerprint", catalog.fingerprint()},
                         {"model_checksum", model_checksum}}
                            .dump(2) +
                        "\n");
}

ShapMatrix load_shap_dir(const std::filesystem::path& dir) {
    const json meta = json::parse(read_text_file(dir / "shap_meta.json"));
    const csv::Table t = csv::read_file(dir / "shap.csv");
    ShapMatrix out;
    out.base_value = meta.at("base_value").get<double>();
    out.n_features = meta.at("n_features").get<std::size_t>();
    if (t.header.size() != out.n_features + 2) {
        throw IoError("shap.csv width does not match shap_meta.json in " + dir.string());
    }
    for (const auto& row : t.rows) {
        out.case_ids.push_back({row[0], parse_date(row[1])});
        for (std::size_t f = 0; f < out.n_features; ++f) {
            out.values.push_back(parse_double(row[f + 2]));
        }
    }
    return out;
}

}  // namespace efshap
