#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"
#include "efshap/gbt.hpp"

namespace efshap {

struct ShapValues {
    std::vector<double> values;  // per-feature, EF-percent units
    double base_value = 0.0;     // expected model output under the cover weighting
};

// Exact path-dependent TreeSHAP. Per tree the value function follows the
// case's branch at a split on an in-subset feature and otherwise averages the
// children by cover fraction; the Shapley values of that function are
// computed in polynomial time via weighted path extension. Missing cells are
// legitimate inputs: they route along the default direction. Ensemble values
// are the sum over trees; base_value adds each tree's cover-weighted mean to
// the base score.
ShapValues tree_shap(const GbtModel& model, std::span<const double> values,
                     std::span<const std::uint8_t> present);
ShapValues tree_shap(const GbtModel& model, const CaseMatrix& data, std::size_t row);
ShapValues tree_shap(const GbtModel& model, const std::vector<std::optional<double>>& row);

// Brute-force Shapley oracle over the same value function: full subset
// enumeration, feasible only for small feature counts.
inline constexpr std::size_t kShapleyOracleMaxFeatures = 20;

std::vector<double> shapley_oracle(const GbtModel& model, std::span<const double> values,
                                   std::span<const std::uint8_t> present);
std::vector<double> shapley_oracle(const GbtModel& model,
                                   const std::vector<std::optional<double>>& row);

// The shared value function: cover-weighted conditional expectation of the
// ensemble given the features in `subset_mask` (bit j = feature j known).
double subset_expectation(const GbtModel& model, std::span<const double> values,
                          std::span<const std::uint8_t> present, std::uint32_t subset_mask);

struct ShapMatrix {
    std::size_t n_features = 0;
    std::vector<double> values;  // row-major n_cases x M
    double base_value = 0.0;
    std::vector<CaseId> case_ids;

    std::size_t n_cases() const { return case_ids.size(); }
    double at(std::size_t row, std::size_t col) const { return values[row * n_features + col]; }
};

ShapMatrix explain_dataset(const GbtModel& model, const CaseMatrix& data, int threads = 0);

struct ShapSummary {
    struct Entry {
        int feature_id = 0;
        double mean_abs_shap = 0.0;
    };
    std::vector<Entry> ranking;  // all features, descending mean |SHAP|, ties by id
    std::vector<int> top;        // first top_k feature ids of the ranking
    // Aligned per-case pairs for the ranked features: (feature value if
    // present, SHAP value), indexed [position in ranking][case].
    std::vector<std::vector<std::pair<std::optional<double>, double>>> pairs;
};

ShapSummary summarize(const ShapMatrix& shap, const CaseMatrix& data, std::size_t top_k = 20);

// shap.csv aligned with cases.csv plus shap_meta.json (base value, model and
// catalog fingerprints).
void save_shap_dir(const std::filesystem::path& dir, const ShapMatrix& shap,
                   const FeatureCatalog& catalog, const std::string& model_checksum);
ShapMatrix load_shap_dir(const std::filesystem::path& dir);

}  // namespace efshap
