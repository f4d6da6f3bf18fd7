#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"
#include "efshap/gbt.hpp"
#include "efshap/shap.hpp"
#include "efshap/tsne.hpp"

namespace efshap {

enum class PlotKind { PredScatter, ImportanceBars, Beeswarm, Dependence, Embedding };

PlotKind parse_plot_kind(std::string_view name);

// File-based plot request; the CLI fills this from flags. Only the inputs a
// kind consumes need to be set. Every renderer is deterministic: identical
// spec and seed give byte-identical SVG.
struct PlotSpec {
    PlotKind kind = PlotKind::Beeswarm;
    std::filesystem::path model_file;   // pred_scatter, importance_bars
    std::filesystem::path cases_dir;    // pred_scatter, importance_bars, beeswarm, dependence
    std::filesystem::path shap_dir;     // beeswarm, dependence
    std::filesystem::path embed_file;   // embedding
    SplitPart split = SplitPart::Test;  // rows used by model-based kinds
    std::string feature;                // dependence target
    std::string color_by;               // embedding: feature name; empty = EF label
    std::size_t top_k = 20;
    int width = 800;
    int height = 500;
    std::uint64_t seed = 0;
};

std::string render(const PlotSpec& spec);

// In-memory renderers behind render(); exposed for tests and library use.
std::string render_pred_scatter(const std::vector<double>& predicted,
                                const std::vector<double>& actual, const EvalReport& report,
                                int width, int height);
std::string render_importance_bars(const std::vector<ImportanceEntry>& entries,
                                   const FeatureCatalog& catalog, int width, int height);
std::string render_beeswarm(const ShapSummary& summary, const FeatureCatalog& catalog,
                            std::size_t top_k, int width, int height, std::uint64_t seed);
std::string render_dependence(const std::string& feature_name,
                              const std::vector<std::pair<std::optional<double>, double>>& pairs,
                              bool binary_feature, int width, int height, std::uint64_t seed);
std::string render_embedding(const Embedding2D& embedding, const std::vector<double>& color_values,
                             const std::string& color_label, int width, int height);

// Two-color ramp used for all pseudo-color: t in [0,1] maps low -> high;
// endpoints documented in docs/plots.md.
std::string ramp_color(double t);

}  // namespace efshap
