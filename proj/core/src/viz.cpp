#include "efshap/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "efshap/common.hpp"

namespace efshap {

namespace {

// Ramp endpoints and the missing-value gray; see docs/plots.md.
constexpr int kRampLow[3] = {0x3b, 0x4c, 0xc0};
constexpr int kRampHigh[3] = {0xb4, 0x04, 0x26};
constexpr const char* kMissingColor = "#999999";
constexpr double kMarginLeft = 150.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 30.0;
constexpr double kMarginBottom = 45.0;

std::string fmt(double v) {
    if (!std::isfinite(v)) v = 0.0;
    if (v == 0.0) v = 0.0;  // never emit -0.00
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return std::string(buf);
}

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

struct LinearScale {
    double lo = 0.0, hi = 1.0;
    double px_lo = 0.0, px_hi = 1.0;

    double operator()(double v) const {
        if (hi == lo) return (px_lo + px_hi) / 2.0;
        return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
    }
};

class Svg {
public:
    Svg(int width, int height) : width_(width), height_(height) {
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
                 "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
                 std::to_string(width) + " " + std::to_string(height) + "\">\n";
        body_ += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
                 std::to_string(height) + "\" fill=\"#ffffff\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& color,
              double stroke = 1.0) {
        body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) +
                 "\" y2=\"" + fmt(y2) + "\" stroke=\"" + color + "\" stroke-width=\"" +
                 fmt(stroke) + "\"/>\n";
    }

    void circle(double cx, double cy, double r, const std::string& fill,
                const std::string& cls = "pt") {
        body_ += "<circle class=\"" + cls + "\" cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) +
                 "\" r=\"" + fmt(r) + "\" fill=\"" + fill + "\" fill-opacity=\"0.75\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill,
              const std::string& cls = "") {
        body_ += "<rect";
        if (!cls.empty()) body_ += " class=\"" + cls + "\"";
        body_ += " x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) + "\" height=\"" +
                 fmt(h) + "\" fill=\"" + fill + "\"/>\n";
    }

    void text(double x, double y, const std::string& content, double size = 12.0,
              const std::string& anchor = "start", const std::string& color = "#222222") {
        body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-family=\"sans-serif\" " +
                 "font-size=\"" + fmt(size) + "\" text-anchor=\"" + anchor + "\" fill=\"" + color +
                 "\">" + escape(content) + "</text>\n";
    }

    // Plot frame with min/mid/max ticks on both axes.
    void frame(const LinearScale& x, const LinearScale& y, const std::string& x_label,
               const std::string& y_label) {
        const std::string axis = "#444444";
        line(x.px_lo, y.px_lo, x.px_hi, y.px_lo, axis);
        line(x.px_lo, y.px_lo, x.px_lo, y.px_hi, axis);
        for (int k = 0; k <= 2; ++k) {
            const double tx = x.lo + (x.hi - x.lo) * k / 2.0;
            const double ty = y.lo + (y.hi - y.lo) * k / 2.0;
            text(x(tx), y.px_lo + 16.0, fmt_tick(tx), 10.0, "middle");
            text(x.px_lo - 6.0, y(ty) + 3.5, fmt_tick(ty), 10.0, "end");
        }
        text((x.px_lo + x.px_hi) / 2.0, y.px_lo + 34.0, x_label, 12.0, "middle");
        text(x.px_lo - 6.0, y.px_hi - 10.0, y_label, 12.0, "end");
    }

    std::string finish() {
        return body_ + "</svg>\n";
    }

    int width() const { return width_; }
    int height() const { return height_; }

private:
    int width_;
    int height_;
    std::string body_;
};

double jitter(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    Rng rng(derive_seed(derive_seed(seed, a), b));
    return rng.uniform() - 0.5;
}

std::pair<double, double> finite_min_max(const std::vector<double>& values) {
    double lo = std::numeric_limits<double>::max();
    double hi = std::numeric_limits<double>::lowest();
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (lo > hi) {
        lo = 0.0;
        hi = 1.0;
    }
    if (lo == hi) hi = lo + 1.0;
    return {lo, hi};
}

}  // namespace

std::string ramp_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                  static_cast<int>(std::lround(kRampLow[0] + t * (kRampHigh[0] - kRampLow[0]))),
                  static_cast<int>(std::lround(kRampLow[1] + t * (kRampHigh[1] - kRampLow[1]))),
                  static_cast<int>(std::lround(kRampLow[2] + t * (kRampHigh[2] - kRampLow[2]))));
    return std::string(buf);
}

PlotKind parse_plot_kind(std::string_view name) {
    if (name == "pred_scatter") return PlotKind::PredScatter;
    if (name == "importance_bars") return PlotKind::ImportanceBars;
    if (name == "beeswarm") return PlotKind::Beeswarm;
    if (name == "dependence") return PlotKind::Dependence;
    if (name == "embedding") return PlotKind::Embedding;
    throw ConfigError("unknown plot kind '" + std::string(name) + "'");
}

std::string render_pred_scatter(const std::vector<double>& predicted,
                                const std::vector<double>& actual, const EvalReport& report,
                                int width, int height) {
    if (predicted.size() != actual.size()) {
        throw ContractError("pred_scatter inputs disagree: predicted has " +
                            std::to_string(predicted.size()) + " rows, actual " +
                            std::to_string(actual.size()));
    }
    Svg svg(width, height);
    auto [alo, ahi] = finite_min_max(actual);
    auto [plo, phi] = finite_min_max(predicted);
    const double lo = std::min(alo, plo), hi = std::max(ahi, phi);
    LinearScale x{lo, hi, kMarginLeft, width - kMarginRight};
    LinearScale y{lo, hi, height - kMarginBottom, kMarginTop};
    svg.frame(x, y, "actual EF (%)", "predicted EF (%)");
    svg.line(x(lo), y(lo), x(hi), y(hi), "#bbbbbb");
    for (std::size_t i = 0; i < actual.size(); ++i) {
        svg.circle(x(actual[i]), y(predicted[i]), 2.2, ramp_color((actual[i] - lo) / (hi - lo)));
    }
    std::string caption = "RMSE=" + fmt(report.rmse);
    if (report.r2) caption += "  R2=" + fmt(*report.r2);
    svg.text(kMarginLeft + 6.0, kMarginTop - 10.0, caption, 13.0);
    return svg.finish();
}

std::string render_importance_bars(const std::vector<ImportanceEntry>& entries,
                                   const FeatureCatalog& catalog, int width, int height) {
    Svg svg(width, height);
    double max_cov = 0.0;
    for (const auto& e : entries) max_cov = std::max(max_cov, e.coverage);
    if (max_cov == 0.0) max_cov = 1.0;
    LinearScale x{0.0, max_cov, kMarginLeft, width - kMarginRight};
    const double band =
        entries.empty() ? 0.0 : (height - kMarginTop - kMarginBottom) / static_cast<double>(entries.size());
    svg.text(kMarginLeft + 6.0, kMarginTop - 10.0, "coverage importance", 13.0);
    for (std::size_t r = 0; r < entries.size(); ++r) {
        const double top = kMarginTop + band * static_cast<double>(r);
        svg.rect(kMarginLeft, top + band * 0.15, x(entries[r].coverage) - kMarginLeft, band * 0.7,
                 ramp_color(entries[r].coverage / max_cov), "bar");
        svg.text(kMarginLeft - 6.0, top + band * 0.62, catalog.at(entries[r].feature_id).name, 10.0,
                 "end");
        svg.text(x(entries[r].coverage) + 4.0, top + band * 0.62, fmt_tick(entries[r].coverage),
                 9.0);
    }
    return svg.finish();
}

std::string render_beeswarm(const ShapSummary& summary, const FeatureCatalog& catalog,
                            std::size_t top_k, int width, int height, std::uint64_t seed) {
    Svg svg(width, height);
    const std::size_t k = std::min(top_k, summary.ranking.size());

    double max_abs = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
        for (const auto& [v, s] : summary.pairs[r]) max_abs = std::max(max_abs, std::abs(s));
    }
    if (max_abs == 0.0) max_abs = 1.0;
    LinearScale x{-max_abs, max_abs, kMarginLeft, width - kMarginRight};
    const double band = k == 0 ? 0.0 : (height - kMarginTop - kMarginBottom) / static_cast<double>(k);

    svg.line(x(0.0), kMarginTop, x(0.0), height - kMarginBottom, "#cccccc");
    svg.text((kMarginLeft + width - kMarginRight) / 2.0, height - 10.0, "SHAP value (EF %)", 12.0,
             "middle");
    for (std::size_t r = 0; r < k; ++r) {
        const double center = kMarginTop + band * (static_cast<double>(r) + 0.5);
        svg.text(kMarginLeft - 6.0, center + 3.5, catalog.at(summary.ranking[r].feature_id).name,
                 10.0, "end");

        // Per-feature value range for the pseudo-color.
        double vlo = std::numeric_limits<double>::max();
        double vhi = std::numeric_limits<double>::lowest();
        for (const auto& [v, s] : summary.pairs[r]) {
            if (v) {
                vlo = std::min(vlo, *v);
                vhi = std::max(vhi, *v);
            }
        }
        const bool has_range = vlo < vhi;
        for (std::size_t i = 0; i < summary.pairs[r].size(); ++i) {
            const auto& [v, s] = summary.pairs[r][i];
            const std::string fill =
                v ? ramp_color(has_range ? (*v - vlo) / (vhi - vlo) : 0.5) : kMissingColor;
            const double cy = center + jitter(seed, r, i) * band * 0.7;
            svg.circle(x(s), cy, 1.8, fill);
        }
    }
    return svg.finish();
}

std::string render_dependence(const std::string& feature_name,
                              const std::vector<std::pair<std::optional<double>, double>>& pairs,
                              bool binary_feature, int width, int height, std::uint64_t seed) {
    Svg svg(width, height);
    std::vector<double> values, shaps;
    for (const auto& [v, s] : pairs) {
        if (!v) continue;  // a dependence plot needs the value on the x axis
        values.push_back(*v);
        shaps.push_back(s);
    }
    auto [vlo, vhi] = finite_min_max(values);
    auto [slo, shi] = finite_min_max(shaps);
    LinearScale x{vlo, vhi, kMarginLeft, width - kMarginRight};
    LinearScale y{slo, shi, height - kMarginBottom, kMarginTop};
    svg.frame(x, y, feature_name, "SHAP value (EF %)");
    for (std::size_t i = 0; i < values.size(); ++i) {
        double cx = x(values[i]);
        if (binary_feature) cx += jitter(seed, 1, i) * 30.0;
        svg.circle(cx, y(shaps[i]), 2.2,
                   ramp_color(vhi > vlo ? (values[i] - vlo) / (vhi - vlo) : 0.5));
    }
    return svg.finish();
}

std::string render_embedding(const Embedding2D& embedding, const std::vector<double>& color_values,
                             const std::string& color_label, int width, int height) {
    const std::size_t n = embedding.coords.size() / 2;
    if (color_values.size() != n) {
        throw ContractError("embedding color values disagree: " + std::to_string(color_values.size()) +
                            " for " + std::to_string(n) + " points");
    }
    Svg svg(width, height);
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = embedding.x(i);
        ys[i] = embedding.y(i);
    }
    auto [xlo, xhi] = finite_min_max(xs);
    auto [ylo, yhi] = finite_min_max(ys);
    auto [clo, chi] = finite_min_max(color_values);
    LinearScale x{xlo, xhi, kMarginLeft, width - kMarginRight};
    LinearScale y{ylo, yhi, height - kMarginBottom, kMarginTop};
    svg.frame(x, y, "t-SNE 1", "t-SNE 2");
    svg.text(kMarginLeft + 6.0, kMarginTop - 10.0,
             "color: " + color_label + " [" + fmt_tick(clo) + ", " + fmt_tick(chi) + "]", 12.0);
    for (std::size_t i = 0; i < n; ++i) {
        svg.circle(x(xs[i]), y(ys[i]), 2.4,
                   ramp_color(chi > clo ? (color_values[i] - clo) / (chi - clo) : 0.5));
    }
    return svg.finish();
}

std::string render(const PlotSpec& spec) {
    switch (spec.kind) {
        case PlotKind::PredScatter: {
            const CaseMatrix cases = load_case_dir(spec.cases_dir);
            const CaseDirMeta meta = load_case_dir_meta(spec.cases_dir);
            const CaseMatrix part = cases.select_rows(select_split(cases, meta, spec.split));
            const GbtModel model = load_model(spec.model_file);
            const std::vector<double> pred = predict_all(model, part);
            const EvalReport report = evaluate_predictions(pred, part.labels());
            return render_pred_scatter(pred, part.labels(), report, spec.width, spec.height);
        }
        case PlotKind::ImportanceBars: {
            const CaseMatrix cases = load_case_dir(spec.cases_dir);
            const CaseDirMeta meta = load_case_dir_meta(spec.cases_dir);
            const CaseMatrix part = cases.select_rows(select_split(cases, meta, spec.split));
            const GbtModel model = load_model(spec.model_file);
            return render_importance_bars(coverage_report(model, part), part.catalog(), spec.width,
                                          spec.height);
        }
        case PlotKind::Beeswarm:
        case PlotKind::Dependence: {
            const CaseMatrix cases = load_case_dir(spec.cases_dir);
            const ShapMatrix shap = load_shap_dir(spec.shap_dir);
            // shap.csv rows are a subset of cases.csv rows; align by case id.
            std::map<std::pair<std::string, Date>, std::size_t> row_of;
            for (std::size_t i = 0; i < cases.n_cases(); ++i) {
                row_of[{cases.case_ids()[i].patient_id, cases.case_ids()[i].echo_date}] = i;
            }
            std::vector<std::size_t> rows;
            rows.reserve(shap.n_cases());
            for (const CaseId& id : shap.case_ids) {
                const auto it = row_of.find({id.patient_id, id.echo_date});
                if (it == row_of.end()) {
                    throw ContractError("shap.csv case " + id.patient_id + "/" +
                                        format_date(id.echo_date) + " not present in cases.csv");
                }
                rows.push_back(it->second);
            }
            const CaseMatrix aligned = cases.select_rows(rows);
            const ShapSummary summary = summarize(shap, aligned, spec.top_k);
            if (spec.kind == PlotKind::Beeswarm) {
                return render_beeswarm(summary, aligned.catalog(), spec.top_k, spec.width,
                                       spec.height, spec.seed);
            }
            const auto fid = aligned.catalog().find(spec.feature);
            if (!fid) throw ConfigError("dependence feature '" + spec.feature + "' not in catalog");
            std::size_t rank = 0;
            while (summary.ranking[rank].feature_id != *fid) ++rank;
            const bool binary = aligned.catalog().at(*fid).kind == FeatureKind::Binary;
            return render_dependence(spec.feature, summary.pairs[rank], binary, spec.width,
                                     spec.height, spec.seed);
        }
        case PlotKind::Embedding: {
            const LoadedEmbedding loaded = load_embedding(spec.embed_file);
            std::vector<double> colors = loaded.labels;
            std::string label = "EF (%)";
            if (!spec.color_by.empty() && spec.color_by != "ef") {
                const CaseMatrix cases = load_case_dir(spec.cases_dir);
                const auto fid = cases.catalog().find(spec.color_by);
                if (!fid) throw ConfigError("color_by feature '" + spec.color_by + "' not in catalog");
                std::map<std::pair<std::string, Date>, std::size_t> row_of;
                for (std::size_t i = 0; i < cases.n_cases(); ++i) {
                    row_of[{cases.case_ids()[i].patient_id, cases.case_ids()[i].echo_date}] = i;
                }
                for (std::size_t i = 0; i < loaded.case_ids.size(); ++i) {
                    const auto it = row_of.find(
                        {loaded.case_ids[i].patient_id, loaded.case_ids[i].echo_date});
                    if (it == row_of.end()) {
                        throw ContractError("embedding case not present in cases.csv");
                    }
                    const auto v = cases.cell(it->second, static_cast<std::size_t>(*fid));
                    colors[i] = v.value_or(0.0);
                }
                label = spec.color_by;
            }
            return render_embedding(loaded.embedding, colors, label, spec.width, spec.height);
        }
    }
    throw ContractError("unhandled plot kind");
}

}  // namespace efshap
