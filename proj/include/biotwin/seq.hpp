#pragma once

// Sequence-to-one force forecasting: one LSTM layer over a window of scaled
// forces, a ReLU dense layer and a scalar output.

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
#include "biotwin/evalkit.hpp"
#include "biotwin/mtwin.hpp"
#include "biotwin/random.hpp"

namespace biotwin::seq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr int kHidden = 64;
inline constexpr int kDense = 32;

/// Flat parameter vector with views. Gate blocks are stacked in the order
/// input, forget, candidate, output (rows [0,H), [H,2H), [2H,3H), [3H,4H)).
///   wx (4H x 1) | wh (4H x H) | b (4H) | wd (D x H) | bd (D) | wo (1 x D) | bo (1)
struct LstmParams {
  int hidden = kHidden;
  int dense = kDense;
  Vector params;

  static Eigen::Index count(int h, int d) { return 4 * h + 4 * h * h + 4 * h + d * h + d + d + 1; }

  Eigen::Map<Vector> wx() { return {params.data(), 4 * hidden}; }
  Eigen::Map<const Vector> wx() const { return {params.data(), 4 * hidden}; }
  Eigen::Map<Matrix> wh() { return {params.data() + off_wh(), 4 * hidden, hidden}; }
  Eigen::Map<const Matrix> wh() const { return {params.data() + off_wh(), 4 * hidden, hidden}; }
  Eigen::Map<Vector> b() { return {params.data() + off_b(), 4 * hidden}; }
  Eigen::Map<const Vector> b() const { return {params.data() + off_b(), 4 * hidden}; }
  Eigen::Map<Matrix> wd() { return {params.data() + off_wd(), dense, hidden}; }
  Eigen::Map<const Matrix> wd() const { return {params.data() + off_wd(), dense, hidden}; }
  Eigen::Map<Vector> bd() { return {params.data() + off_bd(), dense}; }
  Eigen::Map<const Vector> bd() const { return {params.data() + off_bd(), dense}; }
  Eigen::Map<Eigen::RowVectorXd> wo() { return {params.data() + off_wo(), dense}; }
  Eigen::Map<const Eigen::RowVectorXd> wo() const { return {params.data() + off_wo(), dense}; }
  double& bo() { return params[off_wo() + dense]; }
  double bo() const { return params[off_wo() + dense]; }

 private:
  Eigen::Index off_wh() const { return 4 * hidden; }
  Eigen::Index off_b() const { return off_wh() + 4 * hidden * hidden; }
  Eigen::Index off_wd() const { return off_b() + 4 * hidden; }
  Eigen::Index off_bd() const { return off_wd() + dense * hidden; }
  Eigen::Index off_wo() const { return off_bd() + dense; }
};

inline LstmParams zero_lstm(int hidden = kHidden, int dense = kDense) {
  require(hidden >= 1 && dense >= 1, ErrorKind::InvalidArgument, "layer widths must be >= 1");
  LstmParams p;
  p.hidden = hidden;
  p.dense = dense;
  p.params = Vector::Zero(LstmParams::count(hidden, dense));
  return p;
}

/// Recurrent weights uniform in +-1/sqrt(H), forget bias 1, head layers
/// He-normal with zero bias.
inline LstmParams init_lstm(std::uint64_t seed, int hidden = kHidden, int dense = kDense) {
  LstmParams p = zero_lstm(hidden, dense);
  Rng rng = derive_rng(seed, {0x157a});
  std::uniform_real_distribution<double> gate(-1.0 / std::sqrt(hidden), 1.0 / std::sqrt(hidden));
  for (Eigen::Index i = 0; i < p.wx().size(); ++i) p.wx()[i] = gate(rng);
  auto wh = p.wh();
  for (Eigen::Index j = 0; j < wh.cols(); ++j)
    for (Eigen::Index i = 0; i < wh.rows(); ++i) wh(i, j) = gate(rng);
  p.b().segment(hidden, hidden).setOnes();
  std::normal_distribution<double> dense_init(0.0, std::sqrt(2.0 / hidden));
  auto wd = p.wd();
  for (Eigen::Index j = 0; j < wd.cols(); ++j)
    for (Eigen::Index i = 0; i < wd.rows(); ++i) wd(i, j) = dense_init(rng);
  std::normal_distribution<double> out_init(0.0, std::sqrt(2.0 / dense));
  for (Eigen::Index i = 0; i < p.wo().size(); ++i) p.wo()[i] = out_init(rng);
  return p;
}

struct CellState {
  Vector h;
  Vector c;

  static CellState zeros(int hidden) { return {Vector::Zero(hidden), Vector::Zero(hidden)}; }
};

namespace detail {
template <class M>
auto logistic(const M& z) {
  return (1.0 + (-z.array()).exp()).inverse();
}
}  // namespace detail

inline CellState cell_step(const LstmParams& p, double x, const CellState& s) {
  require(s.h.size() == p.hidden && s.c.size() == p.hidden, ErrorKind::WidthMismatch,
          "cell state width must be " + std::to_string(p.hidden));
  const int h = p.hidden;
  Vector z = p.wx() * x + p.wh() * s.h + p.b();
  Vector i = detail::logistic(z.segment(0, h));
  Vector f = detail::logistic(z.segment(h, h));
  Vector g = z.segment(2 * h, h).array().tanh();
  Vector o = detail::logistic(z.segment(3 * h, h));
  CellState out;
  out.c = f.cwiseProduct(s.c) + i.cwiseProduct(g);
  out.h = o.cwiseProduct(Vector(out.c.array().tanh()));
  return out;
}

inline double head(const LstmParams& p, const Vector& h) {
  Vector d = (p.wd() * h + p.bd()).cwiseMax(0.0);
  return p.wo().dot(d) + p.bo();
}

/// Runs the window through the cell from a zero state and returns the
/// scalar prediction for the next value.
inline double forward_window(const LstmParams& p, std::span<const double> window,
                             std::size_t expected = datakit::kWindowWidth) {
  require(window.size() == expected, ErrorKind::WidthMismatch,
          "window must hold " + std::to_string(expected) + " values, got " + std::to_string(window.size()));
  CellState s = CellState::zeros(p.hidden);
  for (double x : window) s = cell_step(p, x, s);
  return head(p, s.h);
}

// ---------------------------------------------------------------------------
// Batched forward / backward through time. Windows are the columns of x
// (T x B).

struct BatchCache {
  std::vector<Matrix> i, f, g, o, c, tc, h;  // per step, H x B; c[0] and h[0] are the zero state
  Matrix dense;                               // D x B after ReLU
  Eigen::RowVectorXd out;                     // 1 x B
};

inline BatchCache forward_cached(const LstmParams& p, const Matrix& x) {
  const int hd = p.hidden;
  const Eigen::Index bsz = x.cols(), steps = x.rows();
  BatchCache k;
  k.c.push_back(Matrix::Zero(hd, bsz));
  k.h.push_back(Matrix::Zero(hd, bsz));
  Matrix z(4 * hd, bsz);
  for (Eigen::Index t = 0; t < steps; ++t) {
    z.noalias() = p.wh() * k.h.back();
    z += p.wx() * x.row(t);
    z.colwise() += p.b();
    k.i.push_back(detail::logistic(z.topRows(hd)).matrix());
    k.f.push_back(detail::logistic(z.middleRows(hd, hd)).matrix());
    k.g.push_back(z.middleRows(2 * hd, hd).array().tanh().matrix());
    k.o.push_back(detail::logistic(z.bottomRows(hd)).matrix());
    k.c.push_back(k.f.back().cwiseProduct(k.c.back()) + k.i.back().cwiseProduct(k.g.back()));
    k.tc.push_back(k.c.back().array().tanh().matrix());
    k.h.push_back(k.o.back().cwiseProduct(k.tc.back()));
  }
  k.dense.noalias() = p.wd() * k.h.back();
  k.dense.colwise() += p.bd();
  k.dense = k.dense.cwiseMax(0.0);
  k.out = p.wo() * k.dense;
  k.out.array() += p.bo();
  return k;
}

struct Gradient {
  double loss = 0.0;  // batch MSE
  Vector params;      // same layout as LstmParams::params
};

/// Exact gradient of the batch MSE by backpropagation through the unroll.
inline Gradient backward(const LstmParams& p, const Matrix& x, std::span<const double> y) {
  require(x.cols() >= 1, ErrorKind::EmptyInput, "backward needs a nonempty batch");
  require(static_cast<std::size_t>(x.cols()) == y.size(), ErrorKind::LengthMismatch,
          "batch windows and targets differ in length");
  const int hd = p.hidden;
  const Eigen::Index bsz = x.cols(), steps = x.rows();
  auto k = forward_cached(p, x);

  LstmParams g = zero_lstm(p.hidden, p.dense);
  Eigen::RowVectorXd dy(bsz);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < bsz; ++b) {
    double err = k.out(b) - y[static_cast<std::size_t>(b)];
    loss += err * err;
    dy(b) = 2.0 * err / static_cast<double>(bsz);
  }
  g.wo() = dy * k.dense.transpose();
  g.bo() = dy.sum();
  Matrix dd = (p.wo().transpose() * dy).cwiseProduct((k.dense.array() > 0.0).cast<double>().matrix());
  g.wd() = dd * k.h.back().transpose();
  g.bd() = dd.rowwise().sum();
  Matrix dh = p.wd().transpose() * dd;
  Matrix dc = Matrix::Zero(hd, bsz);
  Matrix dz(4 * hd, bsz);
  auto gwh = g.wh();
  auto gwx = g.wx();
  auto gb = g.b();
  for (Eigen::Index t = steps; t-- > 0;) {
    const auto s = static_cast<std::size_t>(t);
    const Matrix& i = k.i[s];
    const Matrix& f = k.f[s];
    const Matrix& gg = k.g[s];
    const Matrix& o = k.o[s];
    const Matrix& tc = k.tc[s];
    dc.array() += dh.array() * o.array() * (1.0 - tc.array().square());
    dz.topRows(hd) = (dc.array() * gg.array() * i.array() * (1.0 - i.array())).matrix();
    dz.middleRows(hd, hd) = (dc.array() * k.c[s].array() * f.array() * (1.0 - f.array())).matrix();
    dz.middleRows(2 * hd, hd) = (dc.array() * i.array() * (1.0 - gg.array().square())).matrix();
    dz.bottomRows(hd) = (dh.array() * tc.array() * o.array() * (1.0 - o.array())).matrix();
    gwx.noalias() += dz * x.row(t).transpose();
    gwh.noalias() += dz * k.h[s].transpose();
    gb += dz.rowwise().sum();
    dh.noalias() = p.wh().transpose() * dz;
    dc.array() *= f.array();
  }
  return {loss / static_cast<double>(bsz), std::move(g.params)};
}

inline std::vector<double> predict_batch(const LstmParams& p, const Matrix& x) {
  auto k = forward_cached(p, x);
  return {k.out.data(), k.out.data() + k.out.size()};
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  int hidden = kHidden;
  int dense = kDense;
  AdamConfig adam;
  bool keep_best_validation = false;  // return the best-validation epoch instead of the last
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
  require(c.batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  require(c.hidden >= 1 && c.dense >= 1, ErrorKind::InvalidArgument, "layer widths must be >= 1");
  require(c.adam.learning_rate >= 0.0, ErrorKind::InvalidArgument, "learning rate must be >= 0");
}

struct TrainHistory {
  std::vector<double> train_loss;       // mean batch loss per epoch
  std::vector<double> validation_loss;  // entry 0 precedes training; empty without validation windows
  int selected_epoch = 0;
};

struct TrainResult {
  LstmParams params;
  TrainHistory history;
};

/// Packs the windows `idx` as columns.
inline Matrix gather_windows(const datakit::SlidingWindowSet& set, std::span<const std::size_t> idx) {
  Matrix x(static_cast<Eigen::Index>(set.width), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    auto w = set.window(idx[j]);
    for (std::size_t t = 0; t < w.size(); ++t) x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) = w[t];
  }
  return x;
}

inline std::vector<double> predict_windows(const LstmParams& p, const datakit::SlidingWindowSet& set,
                                           std::span<const std::size_t> idx, std::size_t chunk = 1024) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t lo = 0; lo < idx.size(); lo += chunk) {
    auto part = idx.subspan(lo, std::min(chunk, idx.size() - lo));
    auto pred = predict_batch(p, gather_windows(set, part));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

inline double windows_mse(const LstmParams& p, const datakit::SlidingWindowSet& set, std::span<const std::size_t> idx) {
  auto pred = predict_windows(p, set, idx);
  std::vector<double> truth;
  truth.reserve(idx.size());
  for (auto i : idx) truth.push_back(set.targets[i]);
  return evalkit::mse(truth, pred);
}

/// Mini-batch Adam over the training partition of a scaled window set.
/// Batch order is reshuffled per epoch from (seed, epoch) and the last
/// partial batch is kept.
inline TrainResult train_dynamic(const datakit::SlidingWindowSet& set, const datakit::SplitAssignment& split,
                                 const TrainConfig& config, std::uint64_t seed) {
  validate(config);
  require(split.labels.size() == set.size(), ErrorKind::LengthMismatch, "split does not match window set");
  auto train = split.indices(datakit::Partition::Train);
  auto val = split.indices(datakit::Partition::Validation);
  require(!train.empty(), ErrorKind::EmptyInput, "training partition is empty");

  TrainResult r{init_lstm(seed, config.hidden, config.dense), {}};
  AdamState adam{config.adam, 0, {}, {}};
  LstmParams best = r.params;
  double best_val = INFINITY;
  if (!val.empty()) {
    best_val = windows_mse(r.params, set, val);
    r.history.validation_loss.push_back(best_val);
  }
  std::vector<double> batch_y;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng = derive_rng(seed, {0xe90c, static_cast<std::uint64_t>(epoch)});
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < train.size(); lo += bs) {
      std::span<const std::size_t> idx(train.data() + lo, std::min(bs, train.size() - lo));
      batch_y.clear();
      for (auto i : idx) batch_y.push_back(set.targets[i]);
      auto g = backward(r.params, gather_windows(set, idx), batch_y);
      loss_sum += g.loss * static_cast<double>(idx.size());
      adam_step(adam, r.params.params, g.params);
    }
    r.history.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
    if (!val.empty()) {
      double v = windows_mse(r.params, set, val);
      r.history.validation_loss.push_back(v);
      if (config.keep_best_validation && v < best_val) {
        best_val = v;
        best = r.params;
        r.history.selected_epoch = epoch + 1;
      }
    }
  }
  if (config.keep_best_validation && !val.empty()) {
    r.params = std::move(best);
  } else {
    r.history.selected_epoch = config.epochs;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Forecasting

enum class ForecastMode { TeacherForced, Autoregressive };

inline std::string_view to_string(ForecastMode m) {
  return m == ForecastMode::TeacherForced ? "teacher_forced" : "autoregressive";
}

inline ForecastMode parse_forecast_mode(std::string_view s) {
  if (s == "teacher_forced" || s == "teacher-forced") return ForecastMode::TeacherForced;
  if (s == "autoregressive") return ForecastMode::Autoregressive;
  throw Error(ErrorKind::InvalidArgument, "unknown forecast mode '" + std::string(s) + "'");
}

/// Prediction k targets trace sample k + offset.
struct ForecastResult {
  ForecastMode mode = ForecastMode::TeacherForced;
  std::size_t offset = datakit::kWindowWidth;
  std::vector<double> scaled;
  std::vector<double> newtons;
};

/// `predictor` maps a window of scaled values to the scaled next value.
template <class Predictor>
ForecastResult forecast(const Predictor& predictor, std::span<const double> trace_N, const datakit::MinMaxScaler& scaler,
                        ForecastMode mode, std::size_t width = datakit::kWindowWidth) {
  require(trace_N.size() >= width + 1, ErrorKind::TraceTooShort,
          "forecast needs at least " + std::to_string(width + 1) + " samples, got " + std::to_string(trace_N.size()));
  std::vector<double> scaled(trace_N.size());
  for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] = scaler.apply(trace_N[k]);
  ForecastResult r;
  r.mode = mode;
  r.offset = width;
  const std::size_t n = trace_N.size() - width;
  r.scaled.reserve(n);
  std::vector<double> rolling(scaled.begin(), scaled.begin() + static_cast<std::ptrdiff_t>(width));
  for (std::size_t k = 0; k < n; ++k) {
    std::span<const double> window = mode == ForecastMode::TeacherForced
                                         ? std::span<const double>(scaled.data() + k, width)
                                         : std::span<const double>(rolling.data() + k, width);
    double next = predictor(window);
    r.scaled.push_back(next);
    if (mode == ForecastMode::Autoregressive) rolling.push_back(next);
  }
  r.newtons.reserve(n);
  for (double v : r.scaled) r.newtons.push_back(scaler.invert(v));
  return r;
}

inline ForecastResult forecast(const LstmParams& p, std::span<const double> trace_N, const datakit::MinMaxScaler& scaler,
                               ForecastMode mode, std::size_t width = datakit::kWindowWidth) {
  return forecast([&](std::span<const double> w) { return forward_window(p, w, width); }, trace_N, scaler, mode, width);
}

/// Mean absolute one-step error around stimulation onset versus on the
/// settled part of the stimulation window.
struct TransientReport {
  double onset_mae = 0.0;
  double plateau_mae = 0.0;
  std::size_t onset_points = 0;
  std::size_t plateau_points = 0;
};

inline constexpr std::size_t kOnsetHalfWidth = 5;
inline constexpr std::size_t kSettleSteps = 25;

/// Onset steps are the samples within +-5 of `onset`; plateau steps run
/// from 25 samples after onset up to `stim_end` (exclusive).
inline TransientReport transient_report(std::span<const double> truth_N, const ForecastResult& fc, std::size_t onset,
                                        std::size_t stim_end) {
  require(truth_N.size() == fc.newtons.size() + fc.offset, ErrorKind::LengthMismatch,
          "forecast does not cover the trace");
  TransientReport r;
  double onset_sum = 0.0, plateau_sum = 0.0;
  for (std::size_t k = 0; k < fc.newtons.size(); ++k) {
    const std::size_t idx = k + fc.offset;
    const double err = std::abs(fc.newtons[k] - truth_N[idx]);
    if (idx + kOnsetHalfWidth >= onset && idx <= onset + kOnsetHalfWidth) {
      onset_sum += err;
      ++r.onset_points;
    } else if (idx >= onset + kSettleSteps && idx < stim_end) {
      plateau_sum += err;
      ++r.plateau_points;
    }
  }
  if (r.onset_points) r.onset_mae = onset_sum / static_cast<double>(r.onset_points);
  if (r.plateau_points) r.plateau_mae = plateau_sum / static_cast<double>(r.plateau_points);
  return r;
}

inline TransientReport transient_report(const mtwin::ForceTrace& trace, const ForecastResult& fc) {
  const auto onset = static_cast<std::size_t>(mtwin::steps_for(trace.quiet_period_s));
  return transient_report(trace.forces_N, fc, onset,
                          onset + static_cast<std::size_t>(mtwin::steps_for(trace.protocol.duration_s)));
}

// ---------------------------------------------------------------------------
// Serialization. Matrices are written row-major.

inline constexpr int kArtifactVersion = 1;

namespace detail {
template <class M>
std::vector<double> row_major(const M& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

template <class M>
void fill_row_major(M&& m, const nlohmann::json& j, const char* name) {
  auto v = j.at(name).get<std::vector<double>>();
  require(v.size() == static_cast<std::size_t>(m.size()), ErrorKind::Parse,
          std::string("array '") + name + "' has the wrong number of values");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = v[static_cast<std::size_t>(i * m.cols() + k)];
}
}  // namespace detail

inline nlohmann::json to_json(const LstmParams& p) {
  return {{"hidden", p.hidden},
          {"dense", p.dense},
          {"gate_order", "i,f,g,o"},
          {"wx", detail::row_major(p.wx())},
          {"wh", detail::row_major(p.wh())},
          {"b", detail::row_major(p.b())},
          {"wd", detail::row_major(p.wd())},
          {"bd", detail::row_major(p.bd())},
          {"wo", detail::row_major(p.wo())},
          {"bo", p.bo()}};
}

inline LstmParams lstm_from_json(const nlohmann::json& j) {
  LstmParams p = zero_lstm(j.at("hidden").get<int>(), j.at("dense").get<int>());
  detail::fill_row_major(p.wx(), j, "wx");
  detail::fill_row_major(p.wh(), j, "wh");
  detail::fill_row_major(p.b(), j, "b");
  detail::fill_row_major(p.wd(), j, "wd");
  detail::fill_row_major(p.bd(), j, "bd");
  detail::fill_row_major(p.wo(), j, "wo");
  p.bo() = j.at("bo").get<double>();
  return p;
}

/// Parameters plus the scaler and window width needed to forecast.
struct DynamicModel {
  LstmParams params;
  datakit::MinMaxScaler scaler;
  std::size_t width = datakit::kWindowWidth;
};

inline nlohmann::json to_json(const DynamicModel& m) {
  return {{"format", "biotwin-lstm"}, {"version", kArtifactVersion}, {"window_width", m.width},
          {"scaler", m.scaler.to_json()}, {"params", to_json(m.params)}};
}

inline DynamicModel dynamic_model_from_json(const nlohmann::json& j) {
  try {
    require(j.value("format", std::string()) == "biotwin-lstm", ErrorKind::IncompatibleArtifact,
            "artifact is not a recurrent forecasting model");
    require(j.value("version", 0) == kArtifactVersion, ErrorKind::IncompatibleArtifact,
            "unsupported recurrent artifact version");
    return {lstm_from_json(j.at("params")), datakit::MinMaxScaler::from_json(j.at("scaler")),
            j.at("window_width").get<std::size_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("recurrent artifact: ") + e.what());
  }
}

}  // namespace biotwin::seq
