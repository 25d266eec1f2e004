#pragma once

// Random forest regression: bagged variance-reduction trees averaged
// together, plus randomized hyperparameter search with k-fold CV.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "biotwin/error.hpp"
#include "biotwin/evalkit.hpp"
#include "biotwin/random.hpp"

namespace biotwin::forest {

/// Rows are samples, columns features.
using Matrix = Eigen::MatrixXd;

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;  // leaf prediction
  int left = -1;
  int right = -1;

  bool is_leaf() const { return feature < 0; }
};

/// Nodes in preorder; the root is node 0 and a left child always directly
/// follows its parent.
struct Tree {
  std::vector<TreeNode> nodes;

  template <class Row>
  double predict(const Row& x) const {
    const TreeNode* n = &nodes.front();
    while (!n->is_leaf()) n = &nodes[static_cast<std::size_t>(x(n->feature) <= n->threshold ? n->left : n->right)];
    return n->value;
  }

  std::size_t depth() const {
    std::size_t best = 0;
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto [i, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (!n.is_leaf()) {
        stack.push_back({n.left, d + 1});
        stack.push_back({n.right, d + 1});
      }
    }
    return best;
  }
};

struct ForestParams {
  int n_estimators = 100;
  int max_depth = 10;  // 0: the root is a leaf
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  std::uint64_t seed = 0;

  bool operator==(const ForestParams&) const = default;
};

inline void validate(const ForestParams& p) {
  require(p.n_estimators >= 1, ErrorKind::InvalidArgument, "n_estimators must be >= 1");
  require(p.max_depth >= 0, ErrorKind::InvalidArgument, "max_depth must be >= 0");
  require(p.min_samples_split >= 2, ErrorKind::InvalidArgument, "min_samples_split must be >= 2");
  require(p.min_samples_leaf >= 1, ErrorKind::InvalidArgument, "min_samples_leaf must be >= 1");
}

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // summed squared deviation of both children
};

/// Best split of the rows `idx` (duplicates allowed). Thresholds are the
/// midpoints between consecutive distinct values; ties go to the lower
/// feature, then the lower threshold.
inline std::optional<SplitCandidate> best_split(const Matrix& x, std::span<const double> y,
                                                std::span<const std::size_t> idx, int min_samples_leaf) {
  const std::size_t n = idx.size();
  if (n < 2) return std::nullopt;
  double center = 0.0;
  for (auto i : idx) center += y[i];
  center /= static_cast<double>(n);

  double total = 0.0, total_sq = 0.0;
  for (auto i : idx) {
    double v = y[i] - center;
    total += v;
    total_sq += v * v;
  }
  const double tol = 1e-12 * std::max(total_sq, 1e-300);
  const auto leaf = static_cast<std::size_t>(min_samples_leaf);

  std::optional<SplitCandidate> best;
  std::vector<std::size_t> order(idx.begin(), idx.end());
  for (int f = 0; f < static_cast<int>(x.cols()); ++f) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x(a, f) < x(b, f); });
    double left = 0.0, left_sq = 0.0;
    for (std::size_t p = 1; p < n; ++p) {
      double v = y[order[p - 1]] - center;
      left += v;
      left_sq += v * v;
      double lo = x(order[p - 1], f), hi = x(order[p], f);
      if (!(lo < hi) || p < leaf || n - p < leaf) continue;
      double nl = static_cast<double>(p), nr = static_cast<double>(n - p);
      double right = total - left, right_sq = total_sq - left_sq;
      double score = (left_sq - left * left / nl) + (right_sq - right * right / nr);
      if (!best || score < best->score - tol) best = SplitCandidate{f, 0.5 * (lo + hi), score};
    }
  }
  return best;
}

namespace detail {

inline int grow(Tree& tree, const Matrix& x, std::span<const double> y, std::vector<std::size_t> idx, int depth,
                const ForestParams& params) {
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  double sum = 0.0, lo = INFINITY, hi = -INFINITY;
  for (auto i : idx) {
    sum += y[i];
    lo = std::min(lo, y[i]);
    hi = std::max(hi, y[i]);
  }
  tree.nodes[static_cast<std::size_t>(id)].value = sum / static_cast<double>(idx.size());

  const bool stop = depth >= params.max_depth || static_cast<int>(idx.size()) < params.min_samples_split || lo == hi;
  if (stop) return id;
  auto split = best_split(x, y, idx, params.min_samples_leaf);
  if (!split) return id;

  std::vector<std::size_t> left_idx, right_idx;
  for (auto i : idx) (x(i, split->feature) <= split->threshold ? left_idx : right_idx).push_back(i);
  idx.clear();
  idx.shrink_to_fit();
  int left = grow(tree, x, y, std::move(left_idx), depth + 1, params);
  int right = grow(tree, x, y, std::move(right_idx), depth + 1, params);
  auto& node = tree.nodes[static_cast<std::size_t>(id)];
  node.feature = split->feature;
  node.threshold = split->threshold;
  node.left = left;
  node.right = right;
  return id;
}

inline void check_data(const Matrix& x, std::span<const double> y) {
  require(x.rows() >= 1 && !y.empty(), ErrorKind::EmptyInput, "tree fit needs at least one row");
  require(x.cols() >= 1, ErrorKind::InvalidArgument, "tree fit needs at least one feature");
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorKind::LengthMismatch,
          "feature rows and targets differ in length");
}

}  // namespace detail

/// Greedy variance-reduction tree over the rows `idx` (every row if empty).
inline Tree fit_tree(const Matrix& x, std::span<const double> y, const ForestParams& params,
                     std::vector<std::size_t> idx = {}) {
  detail::check_data(x, y);
  validate(params);
  if (idx.empty()) {
    idx.resize(y.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  Tree tree;
  detail::grow(tree, x, y, std::move(idx), 0, params);
  return tree;
}

struct ForestModel {
  std::vector<Tree> trees;
  ForestParams params;
  std::size_t feature_width = 0;
};

/// Tree t trains on a bootstrap resample of n rows drawn from (seed, t).
inline ForestModel fit_forest(const Matrix& x, std::span<const double> y, const ForestParams& params) {
  detail::check_data(x, y);
  validate(params);
  ForestModel model;
  model.params = params;
  model.feature_width = static_cast<std::size_t>(x.cols());
  model.trees.reserve(static_cast<std::size_t>(params.n_estimators));
  const std::size_t n = y.size();
  for (int t = 0; t < params.n_estimators; ++t) {
    Rng rng = derive_rng(params.seed, {0x7ee, static_cast<std::uint64_t>(t)});
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = pick(rng);
    model.trees.push_back(fit_tree(x, y, params, std::move(sample)));
  }
  return model;
}

inline std::vector<double> predict(const ForestModel& model, const Matrix& x) {
  require(static_cast<std::size_t>(x.cols()) == model.feature_width, ErrorKind::WidthMismatch,
          "forest expects " + std::to_string(model.feature_width) + " features, got " + std::to_string(x.cols()));
  std::vector<double> out(static_cast<std::size_t>(x.rows()), 0.0);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (const auto& tree : model.trees) s += tree.predict(x.row(r));
    out[static_cast<std::size_t>(r)] = s / static_cast<double>(model.trees.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Randomized search

struct ForestGrid {
  std::vector<int> n_estimators{100, 200, 300};
  std::vector<int> max_depth{4, 6, 8, 10};
  std::vector<int> min_samples_split{2, 5, 10};
  std::vector<int> min_samples_leaf{1, 2, 4};

  std::size_t cardinality() const {
    return n_estimators.size() * max_depth.size() * min_samples_split.size() * min_samples_leaf.size();
  }

  /// Lexicographic enumeration (n_estimators slowest, min_samples_leaf fastest).
  ForestParams at(std::size_t index, std::uint64_t seed) const {
    ForestParams p;
    p.seed = seed;
    p.min_samples_leaf = min_samples_leaf[index % min_samples_leaf.size()];
    index /= min_samples_leaf.size();
    p.min_samples_split = min_samples_split[index % min_samples_split.size()];
    index /= min_samples_split.size();
    p.max_depth = max_depth[index % max_depth.size()];
    index /= max_depth.size();
    p.n_estimators = n_estimators[index];
    return p;
  }
};

struct SearchRecord {
  ForestParams params;
  std::vector<double> fold_mse;
  double mean_mse = 0.0;
};

struct SearchResult {
  ForestParams best;
  double best_score = 0.0;
  std::vector<SearchRecord> table;  // in sampling order
};

/// Contiguous fold boundaries; the first n % k folds hold one extra row.
inline std::vector<std::size_t> fold_bounds(std::size_t n, std::size_t k) {
  std::vector<std::size_t> bounds{0};
  for (std::size_t f = 0; f < k; ++f) bounds.push_back(bounds.back() + n / k + (f < n % k ? 1 : 0));
  return bounds;
}

/// Samples n_iter distinct grid points without replacement and scores each
/// by mean k-fold validation MSE. The lowest mean wins; ties keep the point
/// sampled first.
inline SearchResult randomized_search_cv(const ForestGrid& grid, std::size_t n_iter, std::size_t k_folds,
                                         const Matrix& x, std::span<const double> y, std::uint64_t seed) {
  detail::check_data(x, y);
  const std::size_t n = y.size();
  require(k_folds >= 2 && k_folds <= n, ErrorKind::InvalidFolds,
          "k_folds must lie in [2, " + std::to_string(n) + "]");
  require(n_iter >= 1 && n_iter <= grid.cardinality(), ErrorKind::NIterExceedsGrid,
          "n_iter must lie in [1, " + std::to_string(grid.cardinality()) + "]");

  std::vector<std::size_t> points(grid.cardinality());
  std::iota(points.begin(), points.end(), std::size_t{0});
  Rng rng = derive_rng(seed, {0x5ea7c4});
  std::shuffle(points.begin(), points.end(), rng);
  points.resize(n_iter);

  const auto bounds = fold_bounds(n, k_folds);
  SearchResult result;
  for (std::size_t s = 0; s < n_iter; ++s) {
    SearchRecord rec;
    rec.params = grid.at(points[s], seed);
    for (std::size_t f = 0; f < k_folds; ++f) {
      const std::size_t lo = bounds[f], hi = bounds[f + 1];
      Matrix x_train(static_cast<Eigen::Index>(n - (hi - lo)), x.cols());
      Matrix x_val(static_cast<Eigen::Index>(hi - lo), x.cols());
      std::vector<double> y_train, y_val;
      for (std::size_t i = 0; i < n; ++i) {
        if (i >= lo && i < hi) {
          x_val.row(static_cast<Eigen::Index>(y_val.size())) = x.row(static_cast<Eigen::Index>(i));
          y_val.push_back(y[i]);
        } else {
          x_train.row(static_cast<Eigen::Index>(y_train.size())) = x.row(static_cast<Eigen::Index>(i));
          y_train.push_back(y[i]);
        }
      }
      auto model = fit_forest(x_train, y_train, rec.params);
      rec.fold_mse.push_back(evalkit::mse(y_val, predict(model, x_val)));
    }
    rec.mean_mse = evalkit::mean(rec.fold_mse);
    if (s == 0 || rec.mean_mse < result.best_score) {
      result.best = rec.params;
      result.best_score = rec.mean_mse;
    }
    result.table.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ForestParams& p) {
  return {{"n_estimators", p.n_estimators},
          {"max_depth", p.max_depth},
          {"min_samples_split", p.min_samples_split},
          {"min_samples_leaf", p.min_samples_leaf},
          {"seed", p.seed}};
}

inline ForestParams params_from_json(const nlohmann::json& j) {
  ForestParams p;
  p.n_estimators = j.at("n_estimators").get<int>();
  p.max_depth = j.at("max_depth").get<int>();
  p.min_samples_split = j.at("min_samples_split").get<int>();
  p.min_samples_leaf = j.at("min_samples_leaf").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

/// Trees as preorder lists of {feature, threshold} or {leaf}.
inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes.push_back(n.is_leaf() ? nlohmann::json{{"leaf", n.value}}
                                  : nlohmann::json{{"feature", n.feature}, {"threshold", n.threshold}});
    trees.push_back(std::move(nodes));
  }
  return {{"params", to_json(m.params)}, {"feature_width", m.feature_width}, {"trees", trees}};
}

namespace detail {
inline int rebuild(Tree& tree, const nlohmann::json& nodes, std::size_t& cursor) {
  require(cursor < nodes.size(), ErrorKind::Parse, "truncated tree node list");
  const auto& j = nodes[cursor++];
  const int id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (j.contains("leaf")) {
    tree.nodes.back().value = j.at("leaf").get<double>();
    return id;
  }
  const int feature = j.at("feature").get<int>();
  const double threshold = j.at("threshold").get<double>();
  int left = rebuild(tree, nodes, cursor);
  int right = rebuild(tree, nodes, cursor);
  auto& n = tree.nodes[static_cast<std::size_t>(id)];
  n.feature = feature;
  n.threshold = threshold;
  n.left = left;
  n.right = right;
  return id;
}
}  // namespace detail

inline ForestModel forest_from_json(const nlohmann::json& j) {
  try {
    ForestModel m;
    m.params = params_from_json(j.at("params"));
    m.feature_width = j.at("feature_width").get<std::size_t>();
    for (const auto& nodes : j.at("trees")) {
      Tree t;
      std::size_t cursor = 0;
      detail::rebuild(t, nodes, cursor);
      require(cursor == nodes.size(), ErrorKind::Parse, "trailing nodes in tree list");
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("forest artifact: ") + e.what());
  }
}

}  // namespace biotwin::forest
