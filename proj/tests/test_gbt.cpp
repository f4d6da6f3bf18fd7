#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "efshap/gbt.hpp"
#include "oracles.hpp"

using namespace efshap;

namespace {

FeatureCatalog catalog_of(std::size_t m) {
    std::vector<Feature> feats;
    for (std::size_t j = 0; j < m; ++j) {
        feats.push_back({static_cast<int>(j), "LB_F" + std::to_string(j), Category::LB,
                         FeatureKind::Numeric});
    }
    return FeatureCatalog(std::move(feats));
}

// Dense single-feature dataset with explicit labels.
CaseMatrix one_feature(const std::vector<double>& x, const std::vector<double>& y) {
    CaseMatrixBuilder b(catalog_of(1));
    for (std::size_t i = 0; i < x.size(); ++i) {
        b.add_case({"P" + std::to_string(i), 0}, {x[i]}, y[i]);
    }
    return b.build();
}

Hyperparams plain(int n_trees, int depth, double eta, double lambda = 0.0) {
    Hyperparams hp;
    hp.n_trees = n_trees;
    hp.max_depth = depth;
    hp.eta = eta;
    hp.reg_lambda = lambda;
    hp.reg_alpha = 0.0;
    hp.gamma = 0.0;
    hp.subsample = 1.0;
    hp.min_child_weight = 1.0;
    return hp;
}

CaseMatrix random_matrix(std::size_t n, std::size_t m, std::uint64_t seed, double missing_p = 0.2) {
    CaseMatrixBuilder b(catalog_of(m));
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::optional<double>> row(m);
        double signal = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (rng.bernoulli(missing_p)) continue;
            const double v = rng.normal(0.0, 1.0);
            row[j] = v;
            signal += v * (j % 3 == 0 ? 2.0 : -1.0);
        }
        b.add_case({"P" + std::to_string(i), 0}, row,
                   std::clamp(50.0 + 4.0 * signal + rng.normal(0.0, 2.0), 0.0, 100.0));
    }
    return b.build();
}

}  // namespace

TEST_CASE("constant labels grow zero trees and predict the constant") {
    std::vector<double> x{0.0, 1.0, 2.0, 3.0};
    std::vector<double> y{42.0, 42.0, 42.0, 42.0};
    const GbtModel model = train(one_feature(x, y), plain(10, 3, 0.35, 0.5));
    CHECK(model.trees.empty());
    CHECK(model.base_score == 42.0);
    CHECK(predict(model, {{1.5}}) == 42.0);
}

TEST_CASE("perfect binary split reproduces the two means exactly") {
    // Closed form: g = base - y, leaf weight -G/H with lambda = 0, eta = 1.
    std::vector<double> x{0.0, 0.0, 1.0, 1.0, 0.0, 1.0};
    std::vector<double> y{30.0, 30.0, 60.0, 60.0, 30.0, 60.0};
    const GbtModel model = train(one_feature(x, y), plain(1, 1, 1.0, 0.0));
    REQUIRE(model.trees.size() == 1);
    REQUIRE(model.trees[0].nodes.size() == 3);
    CHECK(predict(model, {{0.0}}) == doctest::Approx(30.0).epsilon(1e-12));
    CHECK(predict(model, {{1.0}}) == doctest::Approx(60.0).epsilon(1e-12));
}

TEST_CASE("lambda shrinks leaf weights by n/(n+lambda)") {
    std::vector<double> x{0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
    std::vector<double> y{30.0, 30.0, 30.0, 60.0, 60.0, 60.0};
    const GbtModel free = train(one_feature(x, y), plain(1, 1, 1.0, 0.0));
    const GbtModel damped = train(one_feature(x, y), plain(1, 1, 1.0, 0.5));
    REQUIRE(free.trees.size() == 1);
    REQUIRE(damped.trees.size() == 1);
    const double n_leaf = 3.0;
    for (int leaf : {1, 2}) {
        const double w_free = free.trees[0].nodes[static_cast<std::size_t>(leaf)].weight;
        const double w_damped = damped.trees[0].nodes[static_cast<std::size_t>(leaf)].weight;
        CHECK(w_damped == doctest::Approx(w_free * n_leaf / (n_leaf + 0.5)).epsilon(1e-12));
    }
}

TEST_CASE("leaf weights match -S(G)/(H+lambda) by hand") {
    // y in {30, 60} split by x, base = 45. Per-leaf gradients sum to
    // G = n_leaf * (45 - y_leaf); the weight must equal -S(G)/(H + lambda)
    // for several (alpha, lambda) settings.
    std::vector<double> x{0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
    std::vector<double> y{30.0, 30.0, 30.0, 60.0, 60.0, 60.0};
    for (const auto& [alpha, lambda] : std::vector<std::pair<double, double>>{
             {0.0, 0.0}, {0.0, 0.5}, {2.0, 0.5}, {10.0, 1.0}}) {
        Hyperparams hp = plain(1, 1, 1.0, lambda);
        hp.reg_alpha = alpha;
        const GbtModel model = train(one_feature(x, y), hp);
        REQUIRE(model.trees.size() == 1);
        REQUIRE(model.trees[0].nodes.size() == 3);
        auto soft = [&](double g) {
            if (g > alpha) return g - alpha;
            if (g < -alpha) return g + alpha;
            return 0.0;
        };
        // Left leaf holds the x<thr rows (y = 30): G = 3*(45-30) = 45.
        const double wl = model.trees[0].nodes[1].weight;
        const double wr = model.trees[0].nodes[2].weight;
        CHECK(std::abs(wl - (-soft(45.0) / (3.0 + lambda))) <= 1e-12);
        CHECK(std::abs(wr - (-soft(-45.0) / (3.0 + lambda))) <= 1e-12);
    }
}

TEST_CASE("unregularized deep model interpolates its training labels") {
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        x.push_back(static_cast<double>(i));
        y.push_back(20.0 + 0.9 * i + 0.01 * i * i);  // strictly increasing, noise-free
    }
    const CaseMatrix data = one_feature(x, y);
    const GbtModel model = train(data, plain(1, 10, 1.0, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(std::abs(predict(model, data, i) - y[i]) <= 1e-6);
    }
}

TEST_CASE("prediction basics: zero trees, all-missing row, width mismatch") {
    std::vector<double> x{0.0, 1.0, 2.0, 3.0};
    std::vector<double> y{10.0, 20.0, 60.0, 70.0};
    const CaseMatrix data = one_feature(x, y);

    GbtModel empty_model;
    empty_model.base_score = 40.0;
    empty_model.n_features = 1;
    CHECK(predict(empty_model, {{0.5}}) == 40.0);

    const GbtModel model = train(data, plain(1, 1, 1.0, 0.0));
    CHECK_THROWS_AS(predict(model, {{0.5, 1.0}}), ContractError);

    // All-missing row on the 2-node tree: manual trace along the default
    // direction gives base + that leaf's weight.
    const Tree& tree = model.trees[0];
    REQUIRE(!tree.nodes[0].is_leaf());
    const TreeNode& default_leaf =
        tree.nodes[static_cast<std::size_t>(tree.nodes[0].default_left ? tree.nodes[0].left
                                                                       : tree.nodes[0].right)];
    CHECK(predict(model, {std::vector<std::optional<double>>{std::nullopt}}) ==
          model.base_score + default_leaf.weight);
    const double on_default_side =
        tree.nodes[0].default_left ? tree.nodes[0].threshold - 1.0 : tree.nodes[0].threshold + 1.0;
    CHECK(predict(model, {std::vector<std::optional<double>>{std::nullopt}}) ==
          predict(model, {{on_default_side}}));
}

TEST_CASE("cover accounting and determinism across subsampled forests") {
    const CaseMatrix data = random_matrix(400, 6, 31);
    Hyperparams hp;
    hp.n_trees = 30;
    hp.seed = 77;
    const GbtModel a = train(data, hp);
    const GbtModel b = train(data, hp);
    CHECK(model_to_json(a) == model_to_json(b));

    std::size_t internal_nodes = 0;
    for (const Tree& tree : a.trees) {
        for (const TreeNode& node : tree.nodes) {
            CHECK(node.cover > 0.0);
            if (!node.is_leaf()) {
                ++internal_nodes;
                const double child_sum = tree.nodes[static_cast<std::size_t>(node.left)].cover +
                                         tree.nodes[static_cast<std::size_t>(node.right)].cover;
                CHECK(node.cover == doctest::Approx(child_sum).epsilon(1e-12));
            }
        }
    }
    CHECK(internal_nodes > 0);

    Hyperparams other = hp;
    other.seed = 78;
    CHECK(model_to_json(train(data, other)) != model_to_json(a));
}

TEST_CASE("training RMSE is non-increasing in tree count without sampling") {
    const CaseMatrix data = random_matrix(200, 5, 13, 0.1);
    Hyperparams hp = plain(40, 3, 0.35, 0.5);
    const GbtModel model = train(data, hp);

    // Replay the ensemble prefix by prefix.
    std::vector<double> pred(data.n_cases(), model.base_score);
    double prev_rmse = std::numeric_limits<double>::max();
    auto rmse_of = [&]() {
        double sq = 0.0;
        for (std::size_t i = 0; i < data.n_cases(); ++i) {
            const double d = pred[i] - data.labels()[i];
            sq += d * d;
        }
        return std::sqrt(sq / static_cast<double>(data.n_cases()));
    };
    CHECK(rmse_of() <= prev_rmse);
    prev_rmse = rmse_of();
    for (const Tree& tree : model.trees) {
        for (std::size_t i = 0; i < data.n_cases(); ++i) {
            pred[i] += tree.route(data.row_values(i), data.row_present(i));
        }
        const double r = rmse_of();
        CHECK(r <= prev_rmse + 1e-9);
        prev_rmse = r;
    }
}

TEST_CASE("large gamma stops all splits; huge lambda flattens leaves") {
    const CaseMatrix data = random_matrix(150, 4, 7, 0.0);
    Hyperparams hp = plain(5, 3, 0.35, 0.5);
    hp.gamma = 1e12;
    const GbtModel gated = train(data, hp);
    for (const Tree& tree : gated.trees) CHECK(tree.nodes.size() == 1);

    Hyperparams heavy = plain(5, 3, 0.35, 1e12);
    const GbtModel flat = train(data, heavy);
    for (const Tree& tree : flat.trees) {
        for (const TreeNode& node : tree.nodes) {
            if (node.is_leaf()) CHECK(std::abs(node.weight) <= 1e-6);
        }
    }
}

TEST_CASE("missing values route to the gain-maximizing side consistently") {
    // Feature present for 40 rows, missing for 20 whose labels match the
    // high group; the default direction must carry them there.
    CaseMatrixBuilder b(catalog_of(1));
    std::size_t id = 0;
    for (int i = 0; i < 20; ++i) b.add_case({"P" + std::to_string(id++), 0}, {{0.0}}, 20.0);
    for (int i = 0; i < 20; ++i) b.add_case({"P" + std::to_string(id++), 0}, {{1.0}}, 80.0);
    for (int i = 0; i < 20; ++i) b.add_case({"P" + std::to_string(id++), 0}, {std::nullopt}, 80.0);
    const CaseMatrix data = b.build();
    const GbtModel model = train(data, plain(1, 1, 1.0, 0.0));
    REQUIRE(model.trees.size() == 1);
    const TreeNode& root = model.trees[0].nodes[0];
    REQUIRE(!root.is_leaf());
    CHECK_FALSE(root.default_left);  // missing rows belong with the 80s on the right
    CHECK(predict(model, {std::vector<std::optional<double>>{std::nullopt}}) ==
          predict(model, {{1.0}}));
}

TEST_CASE("coverage importance equals a per-case path-walk oracle") {
    const CaseMatrix data = random_matrix(120, 5, 99);
    Hyperparams hp;
    hp.n_trees = 12;
    hp.seed = 5;
    const GbtModel model = train(data, hp);
    const std::vector<double> got = coverage_importance(model, data);

    // Oracle: walk every (case, tree) path and mark features explicitly.
    std::vector<double> expected(data.n_features(), 0.0);
    for (std::size_t i = 0; i < data.n_cases(); ++i) {
        for (const Tree& tree : model.trees) {
            std::set<int> seen;
            int n = 0;
            while (!tree.nodes[static_cast<std::size_t>(n)].is_leaf()) {
                const TreeNode& node = tree.nodes[static_cast<std::size_t>(n)];
                seen.insert(node.feature_id);
                const std::size_t f = static_cast<std::size_t>(node.feature_id);
                if (data.is_missing(i, f)) {
                    n = node.default_left ? node.left : node.right;
                } else {
                    n = data.raw(i, f) < node.threshold ? node.left : node.right;
                }
            }
            for (int f : seen) expected[static_cast<std::size_t>(f)] += 1.0;
        }
    }
    for (double& e : expected) {
        e /= static_cast<double>(data.n_cases()) * static_cast<double>(model.trees.size());
    }
    REQUIRE(got.size() == expected.size());
    for (std::size_t f = 0; f < got.size(); ++f) {
        CHECK(got[f] == doctest::Approx(expected[f]).epsilon(1e-12));
        CHECK(got[f] >= 0.0);
        CHECK(got[f] <= 1.0);
    }
}

TEST_CASE("coverage importance degenerate cases") {
    const CaseMatrix data = random_matrix(30, 3, 1);
    GbtModel empty_model;
    empty_model.base_score = 1.0;
    empty_model.n_features = 3;
    empty_model.catalog_fingerprint = data.catalog().fingerprint();
    for (double c : coverage_importance(empty_model, data)) CHECK(c == 0.0);

    // One depth-1 tree splitting feature 0: every path crosses the root.
    std::vector<double> x{0.0, 0.0, 1.0, 1.0};
    std::vector<double> y{30.0, 30.0, 60.0, 60.0};
    const CaseMatrix single = one_feature(x, y);
    const GbtModel model = train(single, plain(1, 1, 1.0, 0.0));
    const auto cov = coverage_importance(model, single);
    CHECK(cov[0] == 1.0);
}

TEST_CASE("evaluate matches hand arithmetic and handles degeneracy") {
    const EvalReport hand = evaluate_predictions(std::vector<double>{12.0, 18.0, 33.0},
                                                 std::vector<double>{10.0, 20.0, 30.0});
    CHECK(hand.rmse == doctest::Approx(std::sqrt((4.0 + 4.0 + 9.0) / 3.0)).epsilon(1e-15));
    REQUIRE(hand.pearson_r.has_value());
    CHECK(*hand.r2 == doctest::Approx(*hand.pearson_r * *hand.pearson_r).epsilon(1e-15));

    const EvalReport perfect = evaluate_predictions(std::vector<double>{1.0, 2.0, 3.0},
                                                    std::vector<double>{1.0, 2.0, 3.0});
    CHECK(perfect.rmse == 0.0);
    CHECK(*perfect.r2 == doctest::Approx(1.0));

    const EvalReport flat = evaluate_predictions(std::vector<double>{2.0, 2.0, 2.0},
                                                 std::vector<double>{1.0, 2.0, 3.0});
    CHECK_FALSE(flat.pearson_r.has_value());
    CHECK_FALSE(flat.r2.has_value());

    // r2 here is the squared correlation, not the variance-explained ratio.
    const EvalReport biased = evaluate_predictions(std::vector<double>{101.0, 102.0, 103.0},
                                                   std::vector<double>{1.0, 2.0, 3.0});
    CHECK(*biased.r2 == doctest::Approx(1.0));
    const std::vector<double> a{3.0, 1.0, 4.0, 1.5, 9.0};
    const std::vector<double> p{2.0, 1.2, 3.7, 2.0, 7.5};
    const EvalReport r = evaluate_predictions(p, a);
    CHECK(*r.pearson_r == doctest::Approx(oracles::pearson(p, a)).epsilon(1e-12));
}

TEST_CASE("model JSON round-trips bit-exactly") {
    const CaseMatrix data = random_matrix(80, 4, 3);
    Hyperparams hp;
    hp.n_trees = 8;
    const GbtModel model = train(data, hp);
    const std::string text = model_to_json(model);
    const GbtModel back = model_from_json(text);
    CHECK(model_to_json(back) == text);
    for (std::size_t i = 0; i < data.n_cases(); ++i) {
        CHECK(predict(back, data, i) == predict(model, data, i));
    }
}

TEST_CASE("hyperparams parse Table-2 style JSON with the alias") {
    const Hyperparams hp = hyperparams_from_json(
        R"({"n_trees": 100, "num_boost_round": 500, "max_depth": 3, "eta": 0.35,
            "min_child_weight": 1, "subsample": 0.85, "reg_lambda": 0.5})");
    CHECK(hp.n_trees == 100);  // n_trees wins over the alias
    CHECK(hyperparams_from_json(R"({"num_boost_round": 7})").n_trees == 7);
    CHECK_THROWS_AS(hyperparams_from_json(R"({"eta": 0.0})"), ConfigError);
    CHECK_THROWS_AS(hyperparams_from_json(R"({"subsample": 1.4})"), ConfigError);
}

TEST_CASE("train contract errors") {
    CaseMatrixBuilder b(catalog_of(1));
    b.add_case({"P0", 0}, {{1.0}}, 10.0);
    CHECK_THROWS_AS(train(b.build(), Hyperparams{}), ContractError);

    CaseMatrixBuilder all_missing(catalog_of(1));
    all_missing.add_case({"P0", 0}, {std::nullopt}, 10.0);
    all_missing.add_case({"P1", 0}, {std::nullopt}, 20.0);
    CHECK_THROWS_AS(train(all_missing.build(), Hyperparams{}), ContractError);
}
