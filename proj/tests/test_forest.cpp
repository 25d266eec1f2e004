#include <cmath>
#include <random>
#include <numeric>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "biotwin/forest.hpp"
#include "forest_sweep.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace biotwin;
using namespace biotwin::forest;

namespace {

struct Data {
  Matrix x;
  std::vector<double> y;
};

Data make_data(std::size_t n, std::size_t width, std::uint64_t seed, bool noisy = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Data d{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width)), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < width; ++j) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = u(rng);
    double s = std::sin(6.0 * d.x(static_cast<Eigen::Index>(i), 0));
    if (width > 1) s += d.x(static_cast<Eigen::Index>(i), 1) * d.x(static_cast<Eigen::Index>(i), 1);
    d.y[i] = s + (noisy ? 0.1 * (u(rng) - 0.5) : 0.0);
  }
  return d;
}

double training_mse(const Tree& t, const Data& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    double e = t.predict(d.x.row(i)) - d.y[static_cast<std::size_t>(i)];
    s += e * e;
  }
  return s / static_cast<double>(d.y.size());
}

ForestParams params(int n, int depth, int split = 2, int leaf = 1, std::uint64_t seed = 0) {
  return {n, depth, split, leaf, seed};
}

}  // namespace

TEST(Forest, DepthZeroIsTheMean) {
  Matrix x(2, 1);
  x << 0, 1;
  std::vector<double> y{2, 4};
  auto t = fit_tree(x, y, params(1, 0));
  ASSERT_EQ(t.nodes.size(), 1u);
  EXPECT_EQ(t.nodes[0].value, 3.0);
}

TEST(Forest, PerfectBinarySplit) {
  Matrix x(4, 1);
  x << 0, 0, 1, 1;
  std::vector<double> y{0, 0, 1, 1};
  auto t = fit_tree(x, y, params(1, 3));
  ASSERT_EQ(t.nodes.size(), 3u);
  EXPECT_EQ(t.nodes[0].threshold, 0.5);
  EXPECT_EQ(t.nodes[t.nodes[0].left].value, 0.0);
  EXPECT_EQ(t.nodes[t.nodes[0].right].value, 1.0);
  Data d{x, y};
  EXPECT_EQ(training_mse(t, d), 0.0);
}

TEST(Forest, DeeperTreesNeverFitWorse) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto d = make_data(20, 3, seed, seed % 2 == 0);
    double previous = INFINITY;
    for (int depth = 0; depth <= 10; ++depth) {
      double m = training_mse(fit_tree(d.x, d.y, params(1, depth)), d);
      EXPECT_LE(m, previous + 1e-15) << "depth " << depth;
      previous = m;
    }
    EXPECT_LE(training_mse(fit_tree(d.x, d.y, params(1, 4)), d), training_mse(fit_tree(d.x, d.y, params(1, 0)), d));
  }
}

TEST(Forest, MinSamplesLeafIsRespected) {
  auto d = make_data(60, 2, 3);
  auto t = fit_tree(d.x, d.y, params(1, 10, 2, 7));
  std::vector<int> hits(t.nodes.size(), 0);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    int n = 0;
    while (!t.nodes[static_cast<std::size_t>(n)].is_leaf()) {
      const auto& node = t.nodes[static_cast<std::size_t>(n)];
      n = d.x(i, node.feature) <= node.threshold ? node.left : node.right;
    }
    hits[static_cast<std::size_t>(n)] += 1;
  }
  for (std::size_t k = 0; k < t.nodes.size(); ++k)
    if (t.nodes[k].is_leaf()) EXPECT_GE(hits[k], 7);
  EXPECT_LE(fit_tree(d.x, d.y, params(1, 3)).depth(), 3u);
}

TEST(Forest, GreedySplitMatchesExhaustiveSearch) {
  auto outcome = forest_sweep::run(6, 2);
  EXPECT_GT(outcome.datasets, 1000u);
  EXPECT_EQ(outcome.mismatches, 0u) << outcome.first_mismatch;
}

TEST(Forest, GreedySplitMatchesOracleOnRealFeatures) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto d = make_data(5 + trial % 20, 1 + trial % 3, 100 + trial);
    std::vector<std::vector<double>> rows;
    for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
      rows.emplace_back();
      for (Eigen::Index j = 0; j < d.x.cols(); ++j) rows.back().push_back(d.x(i, j));
    }
    std::vector<std::size_t> idx(d.y.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const int leaf = 1 + trial % 3;
    auto got = best_split(d.x, d.y, idx, leaf);
    auto want = oracle::brute_force_split(rows, d.y, static_cast<std::size_t>(leaf));
    if (want.feature < 0) {
      EXPECT_FALSE(got.has_value());
      continue;
    }
    ASSERT_TRUE(got.has_value());
    EXPECT_EQ(got->feature, want.feature);
    EXPECT_EQ(got->threshold, want.threshold);
    EXPECT_NEAR(got->score, want.score, 1e-12 * std::max(1.0, want.score));
  }
}

TEST(Forest, ConstantDataPredictsTheConstant) {
  Matrix x = Matrix::Constant(5, 2, 1.0);
  std::vector<double> y(5, 7.5);
  auto m = fit_forest(x, y, params(1, 10));
  for (double p : predict(m, x)) EXPECT_EQ(p, 7.5);
}

TEST(Forest, PredictionIsTheMeanOfTrees) {
  auto d = make_data(40, 3, 7);
  auto m = fit_forest(d.x, d.y, params(17, 5, 2, 1, 9));
  ASSERT_EQ(m.trees.size(), 17u);
  auto p = predict(m, d.x);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    double s = 0.0;
    for (const auto& t : m.trees) s += t.predict(d.x.row(i));
    EXPECT_NEAR(p[static_cast<std::size_t>(i)], s / 17.0, 1e-15 * std::max(1.0, std::abs(s)));
  }
}

TEST(Forest, ForestFitsBetterThanTheMean) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto d = make_data(30 + 5 * seed, 2, seed);
    auto leaf_only = training_mse(fit_tree(d.x, d.y, params(1, 0)), d);
    auto pred = predict(fit_forest(d.x, d.y, params(50, 6, 2, 1, seed)), d.x);
    EXPECT_LE(oracle::mse(d.y, pred), leaf_only);
  }
}

TEST(Forest, SeedDeterminism) {
  auto d = make_data(40, 3, 8);
  auto a = predict(fit_forest(d.x, d.y, params(20, 6, 2, 1, 3)), d.x);
  auto b = predict(fit_forest(d.x, d.y, params(20, 6, 2, 1, 3)), d.x);
  auto c = predict(fit_forest(d.x, d.y, params(20, 6, 2, 1, 4)), d.x);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  ForestGrid grid;
  auto s1 = randomized_search_cv(grid, 3, 3, d.x, d.y, 5);
  auto s2 = randomized_search_cv(grid, 3, 3, d.x, d.y, 5);
  EXPECT_EQ(s1.best, s2.best);
  EXPECT_EQ(s1.best_score, s2.best_score);
}

TEST(Forest, Errors) {
  auto d = make_data(10, 2, 1);
  auto m = fit_forest(d.x, d.y, params(2, 3));
  EXPECT_ERROR_KIND(predict(m, Matrix::Zero(2, 3)), ErrorKind::WidthMismatch);
  EXPECT_ERROR_KIND(fit_tree(Matrix(0, 2), std::vector<double>{}, params(1, 1)), ErrorKind::EmptyInput);
  ForestGrid grid;
  EXPECT_ERROR_KIND(randomized_search_cv(grid, 2, 1, d.x, d.y, 0), ErrorKind::InvalidFolds);
  EXPECT_ERROR_KIND(randomized_search_cv(grid, 2, 11, d.x, d.y, 0), ErrorKind::InvalidFolds);
  EXPECT_ERROR_KIND(randomized_search_cv(grid, 109, 2, d.x, d.y, 0), ErrorKind::NIterExceedsGrid);
  EXPECT_ERROR_KIND(fit_forest(d.x, d.y, params(1, 1, 1)), ErrorKind::InvalidArgument);
}

TEST(Forest, GridSamplingWithoutReplacement) {
  ForestGrid grid;
  EXPECT_EQ(grid.cardinality(), 108u);
  std::set<std::tuple<int, int, int, int>> all;
  for (std::size_t i = 0; i < grid.cardinality(); ++i) {
    auto p = grid.at(i, 0);
    all.insert({p.n_estimators, p.max_depth, p.min_samples_split, p.min_samples_leaf});
  }
  EXPECT_EQ(all.size(), 108u);

  // Small grid keeps the exhaustive case quick.
  ForestGrid small{{1, 2}, {1, 2, 3}, {2}, {1, 2}};
  auto d = make_data(12, 2, 2);
  auto some = randomized_search_cv(small, 5, 3, d.x, d.y, 1);
  std::set<std::tuple<int, int, int, int>> seen;
  for (const auto& r : some.table)
    seen.emplace(r.params.n_estimators, r.params.max_depth, r.params.min_samples_split, r.params.min_samples_leaf);
  EXPECT_EQ(seen.size(), 5u);

  auto every = randomized_search_cv(small, small.cardinality(), 3, d.x, d.y, 1);
  seen.clear();
  double best = INFINITY;
  for (const auto& r : every.table) {
    seen.emplace(r.params.n_estimators, r.params.max_depth, r.params.min_samples_split, r.params.min_samples_leaf);
    best = std::min(best, r.mean_mse);
  }
  EXPECT_EQ(seen.size(), small.cardinality());
  EXPECT_EQ(every.best_score, best);
}

TEST(Forest, TwoFoldsCoverEveryRowOnce) {
  EXPECT_EQ(fold_bounds(10, 2), (std::vector<std::size_t>{0, 5, 10}));
  EXPECT_EQ(fold_bounds(11, 3), (std::vector<std::size_t>{0, 4, 8, 11}));
  auto d = make_data(10, 2, 4);
  ForestGrid small{{5}, {2}, {2}, {1}};
  auto r = randomized_search_cv(small, 1, 2, d.x, d.y, 0);
  ASSERT_EQ(r.table.size(), 1u);
  ASSERT_EQ(r.table[0].fold_mse.size(), 2u);
  for (double m : r.table[0].fold_mse) EXPECT_TRUE(std::isfinite(m));
  EXPECT_DOUBLE_EQ(r.table[0].mean_mse, 0.5 * (r.table[0].fold_mse[0] + r.table[0].fold_mse[1]));
}

TEST(Forest, TiesKeepTheFirstSampledPoint) {
  Matrix x = Matrix::Random(12, 2);
  std::vector<double> y(12, 1.0);
  ForestGrid small{{1, 2}, {1, 2}, {2}, {1}};
  auto r = randomized_search_cv(small, 4, 3, x, y, 6);
  EXPECT_EQ(r.best, r.table.front().params);
}

TEST(Forest, ArtifactRoundTrip) {
  auto d = make_data(30, 3, 5);
  auto m = fit_forest(d.x, d.y, params(7, 5, 2, 1, 2));
  auto back = forest_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(predict(back, d.x), predict(m, d.x));
  EXPECT_ERROR_KIND(forest_from_json(nlohmann::json::object({{"params", to_json(m.params)}})), ErrorKind::Parse);
}
