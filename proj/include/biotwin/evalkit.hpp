#pragma once

// Regression metrics, residual analysis and plot-ready report tables.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biotwin/corpus_io.hpp"
#include "biotwin/error.hpp"

namespace biotwin::evalkit {

namespace detail {
inline void check_pair(std::span<const double> y, std::span<const double> yhat) {
  require(y.size() == yhat.size(), ErrorKind::LengthMismatch,
          "truth has " + std::to_string(y.size()) + " values, predictions " + std::to_string(yhat.size()));
  require(!y.empty(), ErrorKind::EmptyInput, "metrics need at least one value");
}
}  // namespace detail

inline double mean(std::span<const double> v) {
  require(!v.empty(), ErrorKind::EmptyInput, "mean of empty sequence");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double mse(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

/// 1 - SS_res / SS_tot, SS_tot taken about mean(y).
inline double r_squared(std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  require(y.size() >= 2, ErrorKind::InvalidArgument, "R^2 needs at least two values");
  const double m = mean(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    ss_tot += (y[i] - m) * (y[i] - m);
  }
  require(ss_tot > 0.0, ErrorKind::ConstantTruth, "R^2 is undefined for constant truth values");
  return 1.0 - ss_res / ss_tot;
}

struct MetricSummary {
  double mse = 0.0;
  double r2 = 0.0;
  std::size_t n = 0;
};

/// Single-pass accumulator: squared-error sum plus Welford mean/M2 of the
/// truth values.
class MetricAccumulator {
 public:
  void add(double y, double yhat) {
    ++n_;
    double e = y - yhat;
    sse_ += e * e;
    double delta = y - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (y - mean_);
  }

  std::size_t count() const { return n_; }
  double mse() const {
    require(n_ > 0, ErrorKind::EmptyInput, "metrics need at least one value");
    return sse_ / static_cast<double>(n_);
  }
  double r_squared() const {
    require(n_ >= 2, ErrorKind::InvalidArgument, "R^2 needs at least two values");
    require(m2_ > 0.0, ErrorKind::ConstantTruth, "R^2 is undefined for constant truth values");
    return 1.0 - sse_ / m2_;
  }
  MetricSummary summary() const { return {mse(), r_squared(), n_}; }

 private:
  std::size_t n_ = 0;
  double sse_ = 0.0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline MetricSummary summarize(std::span<const double> y, std::span<const double> yhat) {
  return {mse(y, yhat), r_squared(y, yhat), y.size()};
}

struct Histogram {
  std::vector<double> edges;  // bins + 1, ascending
  std::vector<std::size_t> counts;
};

struct ResidualReport {
  std::vector<double> residuals;  // truth - prediction
  double mean = 0.0;
  double sd = 0.0;  // population
  Histogram histogram;
  std::vector<std::size_t> outliers;  // indices with |r| > k sd
  double outlier_k = 3.0;
};

inline constexpr std::size_t kDefaultBins = 30;

/// Equal-width bins over the observed range; the last bin is closed. A
/// degenerate range is widened by 0.5 on each side.
inline Histogram histogram(std::span<const double> values, std::size_t bins = kDefaultBins) {
  require(bins >= 1, ErrorKind::InvalidArgument, "histogram needs at least one bin");
  require(!values.empty(), ErrorKind::EmptyInput, "histogram of empty sequence");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  Histogram h;
  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor((v - lo) / width));
    h.counts[std::min(b, bins - 1)] += 1;
  }
  return h;
}

inline ResidualReport residual_report(std::span<const double> y, std::span<const double> yhat,
                                      std::size_t bins = kDefaultBins, double outlier_k = 3.0) {
  detail::check_pair(y, yhat);
  ResidualReport r;
  r.outlier_k = outlier_k;
  r.residuals.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r.residuals[i] = y[i] - yhat[i];
  r.mean = mean(r.residuals);
  double ss = 0.0;
  for (double e : r.residuals) ss += (e - r.mean) * (e - r.mean);
  r.sd = std::sqrt(ss / static_cast<double>(r.residuals.size()));
  r.histogram = histogram(r.residuals, bins);
  for (std::size_t i = 0; i < r.residuals.size(); ++i)
    if (r.sd > 0.0 && std::abs(r.residuals[i]) > outlier_k * r.sd) r.outliers.push_back(i);
  return r;
}

// ---------------------------------------------------------------------------
// Report tables

namespace fs = std::filesystem;
using corpus_io::format_double;

inline void write_scatter(const fs::path& path, std::span<const double> y, std::span<const double> yhat) {
  detail::check_pair(y, yhat);
  std::string out = "true,predicted\n";
  for (std::size_t i = 0; i < y.size(); ++i) out += format_double(y[i]) + "," + format_double(yhat[i]) + "\n";
  corpus_io::write_text(path, out);
}

inline void write_residuals(const fs::path& path, const ResidualReport& r) {
  std::string out = "residual\n";
  for (double e : r.residuals) out += format_double(e) + "\n";
  corpus_io::write_text(path, out);
}

inline void write_histogram(const fs::path& path, const Histogram& h) {
  std::string out = "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b)
    out += format_double(h.edges[b]) + "," + format_double(h.edges[b + 1]) + "," + std::to_string(h.counts[b]) + "\n";
  corpus_io::write_text(path, out);
}

using SummaryRows = std::vector<std::pair<std::string, double>>;

inline void write_summary(const fs::path& path, const SummaryRows& rows) {
  std::string out = "metric,value\n";
  for (const auto& [name, value] : rows) out += name + "," + format_double(value) + "\n";
  corpus_io::write_text(path, out);
}

/// Writes <prefix>scatter.csv, residuals.csv, histogram.csv and appends the
/// metric and residual statistics to `summary`.
inline void write_regression_report(const fs::path& dir, std::span<const double> y, std::span<const double> yhat,
                                    SummaryRows& summary, const std::string& prefix = "") {
  auto m = summarize(y, yhat);
  auto r = residual_report(y, yhat);
  write_scatter(dir / (prefix + "scatter.csv"), y, yhat);
  write_residuals(dir / (prefix + "residuals.csv"), r);
  write_histogram(dir / (prefix + "histogram.csv"), r.histogram);
  summary.emplace_back(prefix + "mse", m.mse);
  summary.emplace_back(prefix + "r2", m.r2);
  summary.emplace_back(prefix + "n", static_cast<double>(m.n));
  summary.emplace_back(prefix + "residual_mean", r.mean);
  summary.emplace_back(prefix + "residual_sd", r.sd);
  summary.emplace_back(prefix + "outliers", static_cast<double>(r.outliers.size()));
}

}  // namespace biotwin::evalkit
