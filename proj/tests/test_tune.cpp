#include "doctest.h"

#include <cmath>
#include <map>

#include "efshap/tune.hpp"

using namespace efshap;

namespace {

CaseMatrix toy_data(std::size_t n, std::uint64_t seed) {
    std::vector<Feature> feats{{0, "LB_A", Category::LB, FeatureKind::Numeric},
                               {1, "LB_B", Category::LB, FeatureKind::Numeric}};
    CaseMatrixBuilder b(FeatureCatalog(std::move(feats)));
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.normal(0.0, 1.0);
        const double c = rng.normal(0.0, 1.0);
        b.add_case({"P" + std::to_string(i), 0}, {a, c},
                   std::clamp(50.0 + 6.0 * a - 3.0 * c + rng.normal(0.0, 1.0), 0.0, 100.0));
    }
    return b.build();
}

}  // namespace

TEST_CASE("coordinate descent finds the optimum of a separable surface") {
    // objective(x) = sum_i f_i(x_i); the coordinate-wise minimum is global.
    const std::vector<std::vector<double>> axes{
        {0.0, 1.0, 2.0, 3.0}, {10.0, 20.0, 30.0}, {-1.0, 0.0, 1.0, 2.0, 3.0}};
    auto f0 = [](double x) { return (x - 2.0) * (x - 2.0); };
    auto f1 = [](double x) { return std::abs(x - 30.0); };
    auto f2 = [](double x) { return (x + 1.0) * (x + 1.0) * 0.5; };
    std::size_t evals = 0;
    auto objective = [&](const std::vector<double>& v) {
        ++evals;
        return f0(v[0]) + f1(v[1]) + f2(v[2]);
    };

    const DescentResult got = coordinate_descent(axes, objective, 10);

    // Exhaustive-grid oracle.
    double best = std::numeric_limits<double>::max();
    std::vector<std::size_t> best_point;
    for (std::size_t a = 0; a < axes[0].size(); ++a) {
        for (std::size_t b = 0; b < axes[1].size(); ++b) {
            for (std::size_t c = 0; c < axes[2].size(); ++c) {
                const double v = objective({axes[0][a], axes[1][b], axes[2][c]});
                if (v < best) {
                    best = v;
                    best_point = {a, b, c};
                }
            }
        }
    }
    CHECK(got.chosen == best_point);
    CHECK(got.converged);
    CHECK(got.sweeps <= 3);
}

TEST_CASE("coordinate descent breaks ties toward the smaller value") {
    const std::vector<std::vector<double>> axes{{5.0, 1.0, 3.0}};
    auto objective = [](const std::vector<double>&) { return 7.0; };
    const DescentResult got = coordinate_descent(axes, objective, 5);
    CHECK(axes[0][got.chosen[0]] == 1.0);
}

TEST_CASE("coordinate descent rejects empty axes") {
    CHECK_THROWS_AS(
        coordinate_descent({{1.0}, {}}, [](const std::vector<double>&) { return 0.0; }, 3),
        ConfigError);
}

TEST_CASE("singleton axes return the single combination after one sweep") {
    TuneGrid grid = tune_grid_from_json(
        R"({"axes": {"max_depth": [2], "eta": [0.5], "n_trees": [5]}, "folds": 3, "seed": 1})");
    const TuneResult r = tune(toy_data(60, 2), grid);
    CHECK(r.best.max_depth == 2);
    CHECK(r.best.eta == 0.5);
    CHECK(r.best.n_trees == 5);
    CHECK(r.converged);
    CHECK(r.sweeps == 1);
}

TEST_CASE("a dominating axis value wins") {
    // 0 trees cannot fit anything; 30 trees strictly dominates on every fold.
    TuneGrid grid = tune_grid_from_json(
        R"({"axes": {"n_trees": [0, 30]}, "folds": 3, "seed": 4})");
    const CaseMatrix data = toy_data(90, 5);
    const TuneResult r = tune(data, grid);
    CHECK(r.best.n_trees == 30);
    CHECK(cv_rmse(data, r.best, 3, 4) < cv_rmse(data, [&] {
              Hyperparams hp;
              hp.n_trees = 0;
              hp.seed = 4;
              return hp;
          }(), 3, 4));
}

TEST_CASE("cv folds are deterministic for a seed and partition the data") {
    const CaseMatrix data = toy_data(50, 8);
    Hyperparams hp;
    hp.n_trees = 5;
    const double a = cv_rmse(data, hp, 5, 11);
    const double b = cv_rmse(data, hp, 5, 11);
    CHECK(a == b);
    CHECK(std::isfinite(a));
    CHECK_THROWS_AS(cv_rmse(data, hp, 1, 0), ConfigError);
}

TEST_CASE("grid config validates axes") {
    CHECK_THROWS_AS(tune_grid_from_json(R"({"axes": {}})"), ConfigError);
    CHECK_THROWS_AS(tune_grid_from_json(R"({"axes": {"eta": []}})"), ConfigError);
    CHECK_THROWS_AS(tune_grid_from_json(R"({"axes": {"bogus": [1]}})"), ConfigError);
    const TuneGrid g = tune_grid_from_json(
        R"({"axes": {"reg_lambda": [0, 0.5], "eta": [0.1, 0.35]}, "folds": 5, "seed": 9})");
    // Axis order is the documented parameter order, not file order.
    REQUIRE(g.axes.size() == 2);
    CHECK(g.axes[0].first == "eta");
    CHECK(g.axes[1].first == "reg_lambda");
}
