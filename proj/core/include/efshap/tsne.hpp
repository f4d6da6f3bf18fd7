#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "efshap/dataset.hpp"
#include "efshap/shap.hpp"

namespace efshap {

struct TsneConfig {
    double perplexity = 0.0;  // 0 = auto: min(100, (N-1)/3); else must satisfy
                              // 1 <= perplexity <= (N-1)/3
    int n_iter = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    int exaggeration_iters = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    int momentum_switch_iter = 250;
    std::uint64_t seed = 0;

    double resolve_perplexity(std::size_t n) const;
};

TsneConfig tsne_config_from_json_file(const std::filesystem::path& path);
TsneConfig tsne_config_from_json(const std::string& text);

// Row-conditional distributions P(j|i) (row-major n x n, zero diagonal, rows
// sum to 1). Each row's Gaussian bandwidth is found by binary search until
// the row's perplexity is within 1e-4 of the target.
std::vector<double> compute_conditional_affinities(const std::vector<double>& points, std::size_t n,
                                                   std::size_t dim, double perplexity,
                                                   int threads = 0);

// Symmetric affinity matrix (P(j|i)+P(i|j))/(2N): zero diagonal, entries
// floored at 1e-12, total mass 1 before the floor.
std::vector<double> compute_affinities(const std::vector<double>& points, std::size_t n,
                                       std::size_t dim, double perplexity, int threads = 0);

struct Embedding2D {
    std::vector<double> coords;  // row-major n x 2
    double final_kl = 0.0;
    std::string input_space;     // "raw_features" or "shap_values"

    double x(std::size_t i) const { return coords[2 * i]; }
    double y(std::size_t i) const { return coords[2 * i + 1]; }
};

// Exact O(N^2) t-SNE: Student-t kernel with one degree of freedom, gradient
// descent with per-dimension gains, momentum schedule and early exaggeration.
// Non-finite updates roll back and halve the step; over the final 100
// iterations a step that would raise KL by more than 1e-6 is likewise halved,
// so the tail of the run is non-increasing. Deterministic for a fixed seed at
// any thread count.
Embedding2D tsne(const std::vector<double>& points, std::size_t n, std::size_t dim,
                 const TsneConfig& config, int threads = 0);

// KL(P || Q(Y)) and its analytic gradient; exposed for verification.
double kl_divergence(const std::vector<double>& affinity, const std::vector<double>& coords,
                     std::size_t n, int threads = 0);
std::vector<double> kl_gradient(const std::vector<double>& affinity,
                                const std::vector<double>& coords, std::size_t n, int threads = 0);

// Raw-feature preparation for embedding: missing cells take the train-split
// column median, then columns are standardized by train-split moments. SHAP
// rows are embedded as-is (shared EF-percent units).
std::vector<double> prepare_raw_points(const CaseMatrix& m, const std::vector<std::size_t>& rows,
                                       const std::vector<std::size_t>& train_rows);
std::vector<double> prepare_shap_points(const ShapMatrix& shap, const std::vector<std::size_t>& rows);

// embed.csv: case_id, x, y, label_ef.
void save_embedding(const std::filesystem::path& path, const Embedding2D& embedding,
                    const std::vector<CaseId>& case_ids, const std::vector<double>& labels);
struct LoadedEmbedding {
    Embedding2D embedding;
    std::vector<CaseId> case_ids;
    std::vector<double> labels;
};
LoadedEmbedding load_embedding(const std::filesystem::path& path);

}  // namespace efshap
