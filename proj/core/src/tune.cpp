#include "efshap/tune.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "efshap/common.hpp"
#include "json.hpp"

namespace efshap {

using nlohmann::json;

DescentResult coordinate_descent(
    const std::vector<std::vector<double>>& axes,
    const std::function<double(const std::vector<double>&)>& objective, int max_sweeps) {
    for (std::size_t a = 0; a < axes.size(); ++a) {
        if (axes[a].empty()) throw ConfigError("grid axis " + std::to_string(a) + " is empty");
    }
    DescentResult result;
    result.chosen.assign(axes.size(), 0);

    std::map<std::vector<std::size_t>, double> memo;
    auto eval = [&](const std::vector<std::size_t>& point) {
        const auto it = memo.find(point);
        if (it != memo.end()) return it->second;
        std::vector<double> values(axes.size());
        for (std::size_t a = 0; a < axes.size(); ++a) values[a] = axes[a][point[a]];
        const double v = objective(values);
        ++result.evaluations;
        memo.emplace(point, v);
        return v;
    };

    while (result.sweeps < max_sweeps) {
        ++result.sweeps;
        bool changed = false;
        for (std::size_t a = 0; a < axes.size(); ++a) {
            std::size_t best_idx = result.chosen[a];
            std::vector<std::size_t> point = result.chosen;
            point[a] = best_idx;
            double best_val = eval(point);
            double best_param = axes[a][best_idx];
            for (std::size_t k = 0; k < axes[a].size(); ++k) {
                if (k == best_idx) continue;
                point[a] = k;
                const double v = eval(point);
                const bool better = v < best_val ||
                                    (v == best_val && axes[a][k] < best_param);
                if (better) {
                    best_val = v;
                    best_idx = k;
                    best_param = axes[a][k];
                }
            }
            if (best_idx != result.chosen[a]) {
                result.chosen[a] = best_idx;
                changed = true;
            }
        }
        if (!changed) {
            result.converged = true;
            break;
        }
    }
    return result;
}

const std::vector<std::string> kTunableParams = {
    "n_trees",      "max_depth", "eta",       "min_child_weight", "col_sample_by_tree",
    "col_sample_by_level", "subsample", "reg_alpha", "reg_lambda",       "gamma",
};

TuneGrid tune_grid_from_json(const std::string& text) {
    const json j = json::parse(text);
    TuneGrid grid;
    grid.folds = j.value("folds", grid.folds);
    grid.max_sweeps = j.value("max_sweeps", grid.max_sweeps);
    grid.seed = j.value("seed", grid.seed);
    if (grid.folds < 2) throw ConfigError("folds must be >= 2");
    if (!j.contains("axes") || j.at("axes").empty()) {
        throw ConfigError("grid config needs a non-empty axes object");
    }
    const json& axes = j.at("axes");
    for (const std::string& name : kTunableParams) {
        if (!axes.contains(name)) continue;
        std::vector<double> values;
        for (const auto& v : axes.at(name)) values.push_back(v.get<double>());
        if (values.empty()) throw ConfigError("grid axis '" + name + "' is empty");
        grid.axes.push_back({name, std::move(values)});
    }
    for (const auto& [name, _] : axes.items()) {
        if (std::find(kTunableParams.begin(), kTunableParams.end(), name) == kTunableParams.end()) {
            throw ConfigError("unknown grid axis '" + name + "'");
        }
    }
    return grid;
}

TuneGrid tune_grid_from_json_file(const std::filesystem::path& path) {
    try {
        return tune_grid_from_json(read_text_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("bad grid config " + path.string() + ": " + e.what());
    }
}

namespace {

void set_param(Hyperparams& hp, const std::string& name, double v) {
    if (name == "n_trees") hp.n_trees = static_cast<int>(v);
    else if (name == "max_depth") hp.max_depth = static_cast<int>(v);
    else if (name == "eta") hp.eta = v;
    else if (name == "min_child_weight") hp.min_child_weight = v;
    else if (name == "col_sample_by_tree") hp.col_sample_by_tree = v;
    else if (name == "col_sample_by_level") hp.col_sample_by_level = v;
    else if (name == "subsample") hp.subsample = v;
    else if (name == "reg_alpha") hp.reg_alpha = v;
    else if (name == "reg_lambda") hp.reg_lambda = v;
    else if (name == "gamma") hp.gamma = v;
    else throw ConfigError("unknown hyperparameter '" + name + "'");
}

}  // namespace

double cv_rmse(const CaseMatrix& data, const Hyperparams& hp, int folds, std::uint64_t fold_seed) {
    const std::size_t n = data.n_cases();
    if (folds < 2 || static_cast<std::size_t>(folds) > n) {
        throw ConfigError("fold count must lie in [2, n_cases]");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(fold_seed, "cv"));
    rng.shuffle(order);

    double total = 0.0;
    for (int k = 0; k < folds; ++k) {
        std::vector<std::size_t> train_rows, valid_rows;
        for (std::size_t i = 0; i < n; ++i) {
            if (static_cast<int>(i % static_cast<std::size_t>(folds)) == k) {
                valid_rows.push_back(order[i]);
            } else {
                train_rows.push_back(order[i]);
            }
        }
        std::sort(train_rows.begin(), train_rows.end());
        std::sort(valid_rows.begin(), valid_rows.end());
        const GbtModel model = train(data.select_rows(train_rows), hp);
        const CaseMatrix valid = data.select_rows(valid_rows);
        const std::vector<double> pred = predict_all(model, valid);
        double sq = 0.0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - valid.labels()[i];
            sq += d * d;
        }
        total += std::sqrt(sq / static_cast<double>(pred.size()));
    }
    return total / static_cast<double>(folds);
}

TuneResult tune(const CaseMatrix& train_data, const TuneGrid& grid) {
    if (grid.axes.empty()) throw ConfigError("tune needs at least one axis");
    std::vector<std::vector<double>> axes;
    axes.reserve(grid.axes.size());
    for (const auto& [name, values] : grid.axes) axes.push_back(values);

    auto objective = [&](const std::vector<double>& values) {
        Hyperparams hp;
        hp.seed = grid.seed;
        for (std::size_t a = 0; a < values.size(); ++a) {
            set_param(hp, grid.axes[a].first, values[a]);
        }
        hp.validate();
        return cv_rmse(train_data, hp, grid.folds, grid.seed);
    };

    const DescentResult d = coordinate_descent(axes, objective, grid.max_sweeps);

    TuneResult result;
    result.best.seed = grid.seed;
    for (std::size_t a = 0; a < d.chosen.size(); ++a) {
        set_param(result.best, grid.axes[a].first, axes[a][d.chosen[a]]);
    }
    result.best.validate();
    result.best_rmse = cv_rmse(train_data, result.best, grid.folds, grid.seed);
    result.sweeps = d.sweeps;
    result.converged = d.converged;
    return result;
}

}  // namespace efshap
