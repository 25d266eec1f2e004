#pragma once

// Feedforward regression network: ReLU hidden layers, linear scalar output,
// trained by mini-batch MSE with Adam.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "biotwin/adam.hpp"
#include "biotwin/datakit.hpp"
#include "biotwin/error.hpp"
#include "biotwin/random.hpp"

namespace biotwin::neural {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline const std::vector<int> kHiddenLayers{68, 50, 30, 10};

/// All weights and biases live in one flat vector: per layer the weight
/// matrix (out x in, column-major) followed by its bias. The prediction is
/// output_offset + output_scale * network(x).
struct MlpModel {
  std::vector<int> sizes;  // input, hidden..., 1
  Vector params;
  double output_offset = 0.0;
  double output_scale = 1.0;

  std::size_t layers() const { return sizes.size() - 1; }
  int input_width() const { return sizes.front(); }

  Eigen::Index weight_offset(std::size_t l) const {
    Eigen::Index off = 0;
    for (std::size_t k = 0; k < l; ++k) off += static_cast<Eigen::Index>(sizes[k + 1]) * (sizes[k] + 1);
    return off;
  }
  Eigen::Map<Matrix> weight(std::size_t l) { return {params.data() + weight_offset(l), sizes[l + 1], sizes[l]}; }
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {params.data() + weight_offset(l), sizes[l + 1], sizes[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) {
    return {params.data() + weight_offset(l) + static_cast<Eigen::Index>(sizes[l + 1]) * sizes[l], sizes[l + 1]};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {params.data() + weight_offset(l) + static_cast<Eigen::Index>(sizes[l + 1]) * sizes[l], sizes[l + 1]};
  }
};

inline Eigen::Index parameter_count(const std::vector<int>& sizes) {
  Eigen::Index n = 0;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) n += static_cast<Eigen::Index>(sizes[k + 1]) * (sizes[k] + 1);
  return n;
}

inline MlpModel zero_mlp(std::vector<int> sizes) {
  require(sizes.size() >= 2, ErrorKind::InvalidArgument, "network needs an input and an output layer");
  for (int s : sizes) require(s >= 1, ErrorKind::InvalidArgument, "layer widths must be >= 1");
  MlpModel m;
  m.params = Vector::Zero(parameter_count(sizes));
  m.sizes = std::move(sizes);
  return m;
}

inline std::vector<int> default_sizes(int input_width) {
  std::vector<int> sizes{input_width};
  sizes.insert(sizes.end(), kHiddenLayers.begin(), kHiddenLayers.end());
  sizes.push_back(1);
  return sizes;
}

/// He-normal weights (variance 2 / fan_in), zero biases.
inline MlpModel init_mlp(int input_width, std::uint64_t seed, std::vector<int> hidden = kHiddenLayers) {
  require(input_width >= 1, ErrorKind::InvalidArgument, "input width must be >= 1");
  std::vector<int> sizes{input_width};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  MlpModel m = zero_mlp(std::move(sizes));
  Rng rng = derive_rng(seed, {0x41e7});
  for (std::size_t l = 0; l < m.layers(); ++l) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / m.sizes[l]));
    auto w = m.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
  }
  return m;
}

namespace detail {
inline void check_width(const MlpModel& m, Eigen::Index width) {
  require(width == m.input_width(), ErrorKind::WidthMismatch,
          "network expects " + std::to_string(m.input_width()) + " inputs, got " + std::to_string(width));
}
}  // namespace detail

/// Activations per layer for a batch held as columns (input_width x B).
/// acts[0] is the input; the last entry is the raw network output.
inline std::vector<Matrix> forward_batch_cached(const MlpModel& m, const Matrix& x_cols) {
  detail::check_width(m, x_cols.rows());
  std::vector<Matrix> acts;
  acts.reserve(m.layers() + 1);
  acts.push_back(x_cols);
  for (std::size_t l = 0; l < m.layers(); ++l) {
    Matrix z = m.weight(l) * acts.back();
    z.colwise() += m.bias(l);
    if (l + 1 < m.layers()) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  return acts;
}

/// Predictions for rows of `x` (samples x features).
inline std::vector<double> forward_batch(const MlpModel& m, const Matrix& x) {
  auto acts = forward_batch_cached(m, x.transpose());
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = m.output_offset + m.output_scale * acts.back()(0, static_cast<Eigen::Index>(i));
  return out;
}

inline double forward(const MlpModel& m, std::span<const double> input) {
  detail::check_width(m, static_cast<Eigen::Index>(input.size()));
  Vector a = Eigen::Map<const Vector>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t l = 0; l < m.layers(); ++l) {
    Vector z = m.weight(l) * a + m.bias(l);
    a = l + 1 < m.layers() ? Vector(z.cwiseMax(0.0)) : z;
  }
  return m.output_offset + m.output_scale * a(0);
}

struct Gradient {
  double loss = 0.0;  // batch MSE
  Vector params;      // same layout as MlpModel::params
};

/// Exact gradient of the batch mean squared error of the predictions
/// (rows of `x`) against `y`. The ReLU derivative at 0 is taken as 0.
inline Gradient backward(const MlpModel& m, const Matrix& x, std::span<const double> y) {
  require(x.rows() >= 1, ErrorKind::EmptyInput, "backward needs a nonempty batch");
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorKind::LengthMismatch,
          "batch rows and targets differ in length");
  auto acts = forward_batch_cached(m, x.transpose());
  const auto batch = static_cast<double>(y.size());
  Matrix delta(1, x.rows());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double err = m.output_offset + m.output_scale * acts.back()(0, i) - y[static_cast<std::size_t>(i)];
    loss += err * err;
    delta(0, i) = 2.0 * err * m.output_scale / batch;
  }
  Gradient g{loss / batch, Vector::Zero(m.params.size())};
  MlpModel view;  // gradient laid out like the parameters
  view.sizes = m.sizes;
  std::swap(view.params, g.params);
  for (std::size_t l = m.layers(); l-- > 0;) {
    view.weight(l).noalias() = delta * acts[l].transpose();
    view.bias(l) = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = m.weight(l).transpose() * delta;
      delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
    }
  }
  std::swap(view.params, g.params);
  return g;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 50;
  int batch_size = 32;
  AdamConfig adam;
  // Fit on standardized targets; predictions are mapped back to target units.
  bool standardize_targets = true;
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
  require(c.batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  require(c.adam.learning_rate >= 0.0, ErrorKind::InvalidArgument, "learning rate must be >= 0");
}

struct TrainResult {
  MlpModel model;
  std::vector<double> history;  // training MSE in target units; entry 0 precedes training
};

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Mini-batch Adam on every row of `x`. The batch order is reshuffled each
/// epoch from (seed, epoch); the last partial batch is kept.
inline TrainResult train_mlp(const Matrix& x, std::span<const double> y, const TrainConfig& config, std::uint64_t seed,
                             std::vector<int> hidden = kHiddenLayers) {
  validate(config);
  require(x.rows() >= 1, ErrorKind::EmptyInput, "training set is empty");
  require(static_cast<std::size_t>(x.rows()) == y.size(), ErrorKind::LengthMismatch,
          "training rows and targets differ in length");
  TrainResult r{init_mlp(static_cast<int>(x.cols()), seed, std::move(hidden)), {}};
  if (config.standardize_targets) {
    auto s = datakit::Standardizer::fit(y);
    r.model.output_offset = s.mean;
    r.model.output_scale = s.sd > 0.0 ? s.sd : 1.0;
  }
  const double grad_scale = 1.0 / (r.model.output_scale * r.model.output_scale);
  auto full_loss = [&] {
    auto pred = forward_batch(r.model, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
    return s / static_cast<double>(y.size());
  };

  AdamState adam{config.adam, 0, {}, {}};
  std::vector<std::size_t> order(y.size());
  std::vector<double> batch_y;
  r.history.push_back(full_loss());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = derive_rng(seed, {0xe90c, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(config.batch_size)) {
      std::span<const std::size_t> idx(order.data() + lo, std::min<std::size_t>(config.batch_size, order.size() - lo));
      batch_y.clear();
      for (auto i : idx) batch_y.push_back(y[i]);
      auto g = backward(r.model, gather_rows(x, idx), batch_y);
      g.params *= grad_scale;
      adam_step(adam, r.model.params, g.params);
    }
    r.history.push_back(full_loss());
  }
  return r;
}

/// Encoder plus network: everything needed to predict from a StaticRow.
struct StaticNetwork {
  datakit::Encoder encoder;
  MlpModel model;
};

inline Matrix encode_rows(const datakit::Encoder& enc, std::span<const datakit::StaticRow> rows) {
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(enc.width()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto v = enc.apply(rows[i]);
    for (std::size_t j = 0; j < v.size(); ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return x;
}

inline std::vector<double> targets_of(std::span<const datakit::StaticRow> rows) {
  std::vector<double> y;
  y.reserve(rows.size());
  for (const auto& r : rows) y.push_back(r.target_max_force_N);
  return y;
}

struct StaticTrainResult {
  StaticNetwork network;
  std::vector<double> history;
};

/// Fits the encoder on `train` and trains the network; the baseline flag
/// only changes the input width.
inline StaticTrainResult train_static(std::span<const datakit::StaticRow> train, const TrainConfig& config,
                                      bool include_baseline, std::uint64_t seed,
                                      const datakit::Encoder::Domain& domain = {}) {
  require(!train.empty(), ErrorKind::EmptyInput, "training set is empty");
  auto enc = datakit::Encoder::fit(train, include_baseline, domain);
  auto fit = train_mlp(encode_rows(enc, train), targets_of(train), config, seed);
  return {{std::move(enc), std::move(fit.model)}, std::move(fit.history)};
}

inline std::vector<double> predict(const StaticNetwork& net, std::span<const datakit::StaticRow> rows) {
  return forward_batch(net.model, encode_rows(net.encoder, rows));
}

// ---------------------------------------------------------------------------
// Serialization. Weights are written row-major per layer.

inline constexpr int kArtifactVersion = 1;

inline nlohmann::json to_json(const MlpModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l < m.layers(); ++l) {
    auto w = m.weight(l);
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) flat.push_back(w(i, j));
    auto b = m.bias(l);
    layers.push_back({{"weights", flat}, {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"sizes", m.sizes}, {"output_offset", m.output_offset}, {"output_scale", m.output_scale}, {"layers", layers}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  MlpModel m = zero_mlp(j.at("sizes").get<std::vector<int>>());
  m.output_offset = j.at("output_offset").get<double>();
  m.output_scale = j.at("output_scale").get<double>();
  const auto& layers = j.at("layers");
  require(layers.size() == m.layers(), ErrorKind::Parse, "layer count does not match sizes");
  for (std::size_t l = 0; l < m.layers(); ++l) {
    auto flat = layers[l].at("weights").get<std::vector<double>>();
    auto bias = layers[l].at("bias").get<std::vector<double>>();
    auto w = m.weight(l);
    require(flat.size() == static_cast<std::size_t>(w.size()) && bias.size() == static_cast<std::size_t>(w.rows()),
            ErrorKind::Parse, "layer " + std::to_string(l) + " has the wrong number of values");
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index k = 0; k < w.cols(); ++k) w(i, k) = flat[static_cast<std::size_t>(i * w.cols() + k)];
    m.bias(l) = Eigen::Map<const Vector>(bias.data(), w.rows());
  }
  return m;
}

inline nlohmann::json to_json(const StaticNetwork& n) {
  return {{"format", "biotwin-mlp"}, {"version", kArtifactVersion}, {"encoder", n.encoder.to_json()},
          {"model", to_json(n.model)}};
}

inline StaticNetwork static_network_from_json(const nlohmann::json& j) {
  try {
    require(j.value("format", std::string()) == "biotwin-mlp", ErrorKind::IncompatibleArtifact,
            "artifact is not a feedforward network");
    require(j.value("version", 0) == kArtifactVersion, ErrorKind::IncompatibleArtifact,
            "unsupported network artifact version");
    StaticNetwork n{datakit::Encoder::from_json(j.at("encoder")), mlp_from_json(j.at("model"))};
    require(static_cast<int>(n.encoder.width()) == n.model.input_width(), ErrorKind::IncompatibleArtifact,
            "encoder width does not match the network input");
    return n;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("network artifact: ") + e.what());
  }
}

}  // namespace biotwin::neural
