#pragma once

#include <functional>
#include <string>
#include <vector>

#include "efshap/gbt.hpp"

namespace efshap {

// Generic coordinate descent over discrete axes: one axis is optimized at a
// time with the others held fixed, in the given order, sweeping until a full
// sweep changes nothing. Objective ties prefer the smaller axis value.
struct DescentResult {
    std::vector<std::size_t> chosen;  // index per axis
    int sweeps = 0;
    bool converged = false;
    std::size_t evaluations = 0;
};

DescentResult coordinate_descent(
    const std::vector<std::vector<double>>& axes,
    const std::function<double(const std::vector<double>&)>& objective, int max_sweeps = 10);

struct TuneGrid {
    // Axis order is fixed by kTunableParams regardless of the order in the
    // config file; every listed axis must be non-empty.
    std::vector<std::pair<std::string, std::vector<double>>> axes;
    int folds = 5;
    int max_sweeps = 10;
    std::uint64_t seed = 0;
};

extern const std::vector<std::string> kTunableParams;

TuneGrid tune_grid_from_json_file(const std::filesystem::path& path);
TuneGrid tune_grid_from_json(const std::string& text);

// Deterministic k-fold assignment from the seed; mean validation RMSE.
double cv_rmse(const CaseMatrix& data, const Hyperparams& hp, int folds, std::uint64_t fold_seed);

struct TuneResult {
    Hyperparams best;
    double best_rmse = 0.0;
    int sweeps = 0;
    bool converged = false;
};

TuneResult tune(const CaseMatrix& train, const TuneGrid& grid);

}  // namespace efshap
