#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"

namespace efshap {

struct Hyperparams {
    int n_trees = 100;
    int max_depth = 3;
    double eta = 0.35;
    double min_child_weight = 1.0;
    double col_sample_by_tree = 1.0;
    double col_sample_by_level = 1.0;
    double subsample = 0.85;
    double reg_alpha = 0.0;
    double reg_lambda = 0.5;
    double gamma = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

Hyperparams hyperparams_from_json_file(const std::filesystem::path& path);
Hyperparams hyperparams_from_json(const std::string& text);

// Flat tree; node 0 is the root. A node is a leaf iff feature_id < 0.
// Leaf weights carry the learning rate already folded in.
struct TreeNode {
    int feature_id = -1;
    double threshold = 0.0;
    bool default_left = false;
    int left = -1;
    int right = -1;
    double weight = 0.0;   // leaf value (EF-percent delta)
    double cover = 0.0;    // training hessian sum reaching the node

    bool is_leaf() const { return feature_id < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;

    double route(std::span<const double> values, std::span<const std::uint8_t> present) const;
    // Cover-weighted mean of the tree output.
    double expected_value() const;
    int max_depth() const;
};

struct GbtModel {
    double base_score = 0.0;
    double eta = 0.35;
    std::string catalog_fingerprint;
    std::size_t n_features = 0;
    std::vector<Tree> trees;
};

// Second-order boosting with a squared-error objective: g = prediction -
// label, h = 1. Split gain and leaf weights use L1 soft-thresholding by
// reg_alpha and L2 damping by reg_lambda; splits need positive gain after the
// gamma penalty and min_child_weight hessian mass on both sides. Missing
// values stay out of the sorted scan and follow the gain-maximizing side.
// Deterministic for fixed (data, hp): ties prefer the lowest feature id, then
// the lowest threshold.
GbtModel train(const CaseMatrix& data, const Hyperparams& hp);

double predict_row(const GbtModel& model, std::span<const double> values,
                   std::span<const std::uint8_t> present);
double predict(const GbtModel& model, const CaseMatrix& data, std::size_t row);
double predict(const GbtModel& model, const std::vector<std::optional<double>>& row);
std::vector<double> predict_all(const GbtModel& model, const CaseMatrix& data, int threads = 0);

// Fraction of (case, tree) decision paths that cross at least one split on
// each feature; in [0,1] per feature.
std::vector<double> coverage_importance(const GbtModel& model, const CaseMatrix& data);

struct ImportanceEntry {
    int feature_id = 0;
    double coverage = 0.0;
};
// Entries with coverage >= threshold, sorted by descending coverage, ties by
// feature id.
std::vector<ImportanceEntry> coverage_report(const GbtModel& model, const CaseMatrix& data,
                                             double threshold = 0.01);

struct EvalReport {
    double rmse = 0.0;
    std::optional<double> r2;         // squared Pearson correlation
    std::optional<double> pearson_r;  // absent when either side has zero variance
    std::size_t n = 0;
};

EvalReport evaluate(const GbtModel& model, const CaseMatrix& data);
EvalReport evaluate_predictions(std::span<const double> predicted, std::span<const double> actual);

void save_model(const std::filesystem::path& path, const GbtModel& model);
GbtModel load_model(const std::filesystem::path& path);
std::string model_to_json(const GbtModel& model);
GbtModel model_from_json(const std::string& text);

void save_eval_report(const std::filesystem::path& path, const EvalReport& report);

}  // namespace efshap
