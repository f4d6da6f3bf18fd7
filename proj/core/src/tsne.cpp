#include "efshap/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>

#include "efshap/csv.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

namespace {

constexpr double kAffinityFloor = 1e-12;
constexpr double kKlStepTolerance = 1e-6;
constexpr int kMaxHalvings = 40;
constexpr int kMonotoneTailIters = 100;

}  // namespace

double TsneConfig::resolve_perplexity(std::size_t n) const {
    const double cap = (static_cast<double>(n) - 1.0) / 3.0;
    if (perplexity == 0.0) return std::min(100.0, cap);
    if (perplexity < 1.0 || perplexity > cap) {
        throw ConfigError("perplexity " + format_double(perplexity) + " outside [1, (N-1)/3] for N = " +
                          std::to_string(n));
    }
    return perplexity;
}

TsneConfig tsne_config_from_json(const std::string& text) {
    const json j = json::parse(text);
    TsneConfig c;
    c.perplexity = j.value("perplexity", c.perplexity);
    c.n_iter = j.value("n_iter", c.n_iter);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.early_exaggeration = j.value("early_exaggeration", c.early_exaggeration);
    c.exaggeration_iters = j.value("exaggeration_iters", c.exaggeration_iters);
    c.initial_momentum = j.value("initial_momentum", c.initial_momentum);
    c.final_momentum = j.value("final_momentum", c.final_momentum);
    c.momentum_switch_iter = j.value("momentum_switch_iter", c.momentum_switch_iter);
    c.seed = j.value("seed", c.seed);
    if (c.n_iter < 1) throw ConfigError("n_iter must be >= 1");
    if (c.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (c.early_exaggeration < 1.0) throw ConfigError("early_exaggeration must be >= 1");
    return c;
}

TsneConfig tsne_config_from_json_file(const std::filesystem::path& path) {
    try {
        return tsne_config_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad tsne config " + path.string() + ": " + e.what());
    }
}

std::vector<double> compute_conditional_affinities(const std::vector<double>& points, std::size_t n,
                                                   std::size_t dim, double perplexity, int threads) {
    if (n < 4) throw ContractError("affinities need at least 4 points");
    if (points.size() != n * dim) throw ContractError("points size != n * dim");
    for (double v : points) {
        if (!std::isfinite(v)) throw ContractError("points must be finite (impute missing first)");
    }
    if (perplexity < 1.0 || perplexity > (static_cast<double>(n) - 1.0)) {
        throw ConfigError("perplexity must lie in [1, N-1]");
    }

    // Conditional distributions, one bandwidth search per row.
    std::vector<double> conditional(n * n, 0.0);
    std::string error;
    std::mutex error_mutex;
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<double> d2(n, 0.0);
        double d2_min = std::numeric_limits<double>::max();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double acc = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = points[i * dim + k] - points[j * dim + k];
                acc += diff * diff;
            }
            d2[j] = acc;
            d2_min = std::min(d2_min, acc);
        }

        double beta = 1.0;
        double beta_lo = 0.0;
        double beta_hi = std::numeric_limits<double>::infinity();
        double realized = 0.0;
        std::vector<double> p(n, 0.0);
        for (int iter = 0; iter < 200; ++iter) {
            double sum = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                p[j] = j == i ? 0.0 : std::exp(-beta * (d2[j] - d2_min));
                sum += p[j];
            }
            double entropy_nats = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (p[j] <= 0.0) continue;
                const double q = p[j] / sum;
                entropy_nats -= q * std::log(q);
            }
            realized = std::exp2(entropy_nats / std::numbers::ln2);
            if (std::abs(realized - perplexity) <= 1e-4) {
                for (std::size_t j = 0; j < n; ++j) conditional[i * n + j] = p[j] / sum;
                return;
            }
            if (realized > perplexity) {
                beta_lo = beta;
                beta = std::isinf(beta_hi) ? beta * 2.0 : (beta_lo + beta_hi) / 2.0;
            } else {
                beta_hi = beta;
                beta = (beta_lo + beta_hi) / 2.0;
            }
        }
        std::lock_guard<std::mutex> lock(error_mutex);
        if (error.empty()) {
            error = "perplexity " + format_double(perplexity) + " infeasible for row " +
                    std::to_string(i) + " (realized " + format_double(realized) + ")";
        }
    });
    if (!error.empty()) throw ConfigError(error);
    return conditional;
}

std::vector<double> compute_affinities(const std::vector<double>& points, std::size_t n,
                                       std::size_t dim, double perplexity, int threads) {
    const std::vector<double> conditional =
        compute_conditional_affinities(points, n, dim, perplexity, threads);

    // Symmetrize to total mass 1, then apply the off-diagonal floor.
    std::vector<double> p_sym(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v =
                (conditional[i * n + j] + conditional[j * n + i]) / (2.0 * static_cast<double>(n));
            const double floored = std::max(v, kAffinityFloor);
            p_sym[i * n + j] = floored;
            p_sym[j * n + i] = floored;
        }
    }
    return p_sym;
}

namespace {

// Student-t weights for one row; returns the row sum of w = 1/(1+d^2).
double row_weights(const std::vector<double>& coords, std::size_t n, std::size_t i,
                   std::vector<double>& w) {
    double sum = 0.0;
    const double xi = coords[2 * i];
    const double yi = coords[2 * i + 1];
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            w[j] = 0.0;
            continue;
        }
        const double dx = xi - coords[2 * j];
        const double dy = yi - coords[2 * j + 1];
        w[j] = 1.0 / (1.0 + dx * dx + dy * dy);
        sum += w[j];
    }
    return sum;
}

double total_weight(const std::vector<double>& coords, std::size_t n, int threads) {
    std::vector<double> row_sums(n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<double> w(n);
        row_sums[i] = row_weights(coords, n, i, w);
    });
    double z = 0.0;
    for (double s : row_sums) z += s;  // fixed order keeps runs bit-identical
    return z;
}

}  // namespace

double kl_divergence(const std::vector<double>& affinity, const std::vector<double>& coords,
                     std::size_t n, int threads) {
    const double z = total_weight(coords, n, threads);
    std::vector<double> row_kl(n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<double> w(n);
        row_weights(coords, n, i, w);
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double p = affinity[i * n + j];
            if (p <= 0.0) continue;
            const double q = std::max(w[j] / z, kAffinityFloor);
            acc += p * std::log(p / q);
        }
        row_kl[i] = acc;
    });
    double kl = 0.0;
    for (double v : row_kl) kl += v;
    return kl;
}

namespace {

// One fused pass: gradient of KL(p_eff || Q) plus, when p_true is non-null,
// KL(p_true || Q) of the same coordinates.
std::vector<double> gradient_pass(const std::vector<double>& p_eff, const std::vector<double>* p_true,
                                  const std::vector<double>& coords, std::size_t n, int threads,
                                  double* kl_out) {
    const double z = total_weight(coords, n, threads);
    std::vector<double> grad(2 * n, 0.0);
    std::vector<double> row_kl(p_true ? n : 0, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<double> w(n);
        row_weights(coords, n, i, w);
        double gx = 0.0, gy = 0.0, kl = 0.0;
        const double xi = coords[2 * i];
        const double yi = coords[2 * i + 1];
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double q = std::max(w[j] / z, kAffinityFloor);
            const double mult = 4.0 * (p_eff[i * n + j] - q) * w[j];
            gx += mult * (xi - coords[2 * j]);
            gy += mult * (yi - coords[2 * j + 1]);
            if (p_true) {
                const double p = (*p_true)[i * n + j];
                if (p > 0.0) kl += p * std::log(p / q);
            }
        }
        grad[2 * i] = gx;
        grad[2 * i + 1] = gy;
        if (p_true) row_kl[i] = kl;
    });
    if (p_true && kl_out) {
        double kl = 0.0;
        for (double v : row_kl) kl += v;
        *kl_out = kl;
    }
    return grad;
}

}  // namespace

std::vector<double> kl_gradient(const std::vector<double>& affinity,
                                const std::vector<double>& coords, std::size_t n, int threads) {
    return gradient_pass(affinity, nullptr, coords, n, threads, nullptr);
}

Embedding2D tsne(const std::vector<double>& points, std::size_t n, std::size_t dim,
                 const TsneConfig& config, int threads) {
    const double perplexity = config.resolve_perplexity(n);
    const std::vector<double> p = compute_affinities(points, n, dim, perplexity, threads);

    std::vector<double> p_exag(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) p_exag[k] = p[k] * config.early_exaggeration;

    Embedding2D out;
    out.coords.assign(2 * n, 0.0);
    Rng rng(derive_seed(config.seed, "tsne-init"));
    for (double& c : out.coords) c = rng.normal(0.0, 1e-4);

    std::vector<double> velocity(2 * n, 0.0);
    std::vector<double> gains(2 * n, 1.0);

    const int monotone_from = std::max(config.n_iter - kMonotoneTailIters, config.exaggeration_iters);
    double last_kl = std::numeric_limits<double>::quiet_NaN();

    // The returned embedding is the best iterate seen: descent holds over the
    // whole run even when an aggressive schedule wanders uphill first.
    std::vector<double> best_coords = out.coords;
    double best_kl = std::numeric_limits<double>::max();

    for (int iter = 0; iter < config.n_iter; ++iter) {
        const bool exaggerating = iter < config.exaggeration_iters;
        const std::vector<double>& p_eff = exaggerating ? p_exag : p;
        const double momentum =
            iter < config.momentum_switch_iter ? config.initial_momentum : config.final_momentum;
        const bool monotone = iter >= monotone_from && !exaggerating;

        double kl_here = 0.0;
        const std::vector<double> grad = gradient_pass(p_eff, &p, out.coords, n, threads, &kl_here);
        if (kl_here < best_kl) {
            best_kl = kl_here;
            best_coords = out.coords;
        }
        if (monotone && std::isnan(last_kl)) last_kl = kl_here;

        double step_scale = 1.0;
        const std::vector<double> coords_before = out.coords;
        const std::vector<double> velocity_before = velocity;
        std::vector<double> gains_before;
        if (monotone) gains_before = gains;

        int halvings = 0;
        for (;;) {
            bool finite = true;
            for (std::size_t k = 0; k < 2 * n; ++k) {
                const double g = grad[k];
                if (!std::isfinite(g)) {
                    finite = false;
                    break;
                }
                const bool same_sign = (g > 0.0) == (velocity[k] > 0.0);
                gains[k] = same_sign ? std::max(gains[k] * 0.8, 0.01) : gains[k] + 0.2;
                velocity[k] = momentum * velocity[k] - config.learning_rate * step_scale * gains[k] * g;
                out.coords[k] += velocity[k];
                if (!std::isfinite(out.coords[k])) finite = false;
            }

            bool accept = finite;
            if (finite && monotone) {
                const double kl = kl_divergence(p, out.coords, n, threads);
                if (kl > last_kl + kKlStepTolerance) {
                    accept = false;
                } else {
                    last_kl = kl;
                }
            }
            if (accept) break;

            out.coords = coords_before;
            velocity = velocity_before;
            if (monotone) gains = gains_before;
            if (++halvings > kMaxHalvings) {
                if (!finite) {
                    throw ContractError("t-SNE diverged (non-finite update) at iteration " +
                                        std::to_string(iter));
                }
                // No acceptable downhill step; keep the current embedding.
                std::fill(velocity.begin(), velocity.end(), 0.0);
                break;
            }
            step_scale /= 2.0;
            if (monotone) std::fill(velocity.begin(), velocity.end(), 0.0);
        }
    }

    const double end_kl = kl_divergence(p, out.coords, n, threads);
    if (end_kl < best_kl) {
        best_kl = end_kl;
        best_coords = out.coords;
    }
    out.coords = std::move(best_coords);
    out.final_kl = best_kl;
    return out;
}

std::vector<double> prepare_raw_points(const CaseMatrix& m, const std::vector<std::size_t>& rows,
                                       const std::vector<std::size_t>& train_rows) {
    const std::size_t d = m.n_features();
    std::vector<double> median(d, 0.0), mean(d, 0.0), sd(d, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
        std::vector<double> seen;
        for (std::size_t r : train_rows) {
            const auto v = m.cell(r, j);
            if (v) seen.push_back(*v);
        }
        if (seen.empty()) continue;
        std::sort(seen.begin(), seen.end());
        median[j] = seen[seen.size() / 2];
        double acc = 0.0;
        for (double v : seen) acc += v;
        mean[j] = acc / static_cast<double>(seen.size());
        double var = 0.0;
        for (double v : seen) var += (v - mean[j]) * (v - mean[j]);
        var /= static_cast<double>(seen.size());
        if (var > 0.0) sd[j] = std::sqrt(var);
    }

    std::vector<double> points(rows.size() * d, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const auto v = m.cell(rows[i], j);
            points[i * d + j] = ((v ? *v : median[j]) - mean[j]) / sd[j];
        }
    }
    return points;
}

std::vector<double> prepare_shap_points(const ShapMatrix& shap, const std::vector<std::size_t>& rows) {
    const std::size_t d = shap.n_features;
    std::vector<double> points(rows.size() * d, 0.0);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) points[i * d + j] = shap.at(rows[i], j);
    }
    return points;
}

void save_embedding(const std::filesystem::path& path, const Embedding2D& embedding,
                    const std::vector<CaseId>& case_ids, const std::vector<double>& labels) {
    const std::size_t n = case_ids.size();
    if (embedding.coords.size() != 2 * n || labels.size() != n) {
        throw ContractError("embedding, case ids and labels disagree on length");
    }
    csv::Table t;
    t.header = {"patient_id", "echo_date", "x", "y", "label_ef"};
    for (std::size_t i = 0; i < n; ++i) {
        t.rows.push_back({case_ids[i].patient_id, format_date(case_ids[i].echo_date),
                          format_double(embedding.x(i)), format_double(embedding.y(i)),
                          format_double(labels[i])});
    }
    csv::write_file(path, t);
}

LoadedEmbedding load_embedding(const std::filesystem::path& path) {
    const csv::Table t = csv::read_file(path);
    LoadedEmbedding out;
    for (const auto& row : t.rows) {
        out.case_ids.push_back({row[0], parse_date(row[1])});
        out.embedding.coords.push_back(parse_double(row[2]));
        out.embedding.coords.push_back(parse_double(row[3]));
        out.labels.push_back(parse_double(row[4]));
    }
    return out;
}

}  // namespace efshap
