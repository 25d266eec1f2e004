#pragma once

// Dataset assembly for both prediction tasks: static max-force rows with
// one-hot/standardized encodings, and sliding next-step windows over the
// min-max scaled force series. Seeded partitioning for both.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "biotwin/error.hpp"
#include "biotwin/mtwin.hpp"
#include "biotwin/random.hpp"

namespace biotwin::datakit {

using mtwin::ForceTrace;

// ---------------------------------------------------------------------------
// Static rows

struct StaticRow {
  std::string experiment_id;
  std::string sample_id;
  std::string waveform;
  double frequency_Hz = 0.0;
  double pulse_width_ms = 0.0;
  std::optional<double> baseline_force_N;
  double target_max_force_N = 0.0;
};

/// Target is the raw maximum of the whole trace; the baseline is the mean of
/// the first 10 (unstimulated) samples.
inline StaticRow extract_static_row(const ForceTrace& trace, bool include_baseline) {
  require(trace.size() >= mtwin::kBaselineSamples + 1, ErrorKind::TraceTooShort,
          "trace " + trace.experiment_id + " has fewer than 11 samples");
  StaticRow row;
  row.experiment_id = trace.experiment_id;
  row.sample_id = trace.sample_id;
  row.waveform = std::string(stimgen::to_string(trace.protocol.waveform));
  row.frequency_Hz = trace.protocol.frequency_Hz;
  row.pulse_width_ms = trace.protocol.pulse_width_ms;
  row.target_max_force_N = *std::max_element(trace.forces_N.begin(), trace.forces_N.end());
  if (include_baseline) {
    double sum = 0.0;
    for (std::size_t k = 0; k < mtwin::kBaselineSamples; ++k) sum += trace.forces_N[k];
    row.baseline_force_N = sum / static_cast<double>(mtwin::kBaselineSamples);
  }
  require(std::isfinite(row.target_max_force_N), ErrorKind::InvalidArgument, "non-finite target");
  return row;
}

inline std::vector<StaticRow> extract_static_rows(std::span<const ForceTrace> traces, bool include_baseline) {
  std::vector<StaticRow> rows;
  rows.reserve(traces.size());
  for (const auto& t : traces) rows.push_back(extract_static_row(t, include_baseline));
  return rows;
}

// ---------------------------------------------------------------------------
// Encoders

/// One-hot over a sorted category list.
class OneHot {
 public:
  OneHot() = default;

  /// Categories are the union of the observed values and any declared
  /// domain values (e.g. every waveform the stimulator can produce).
  static OneHot fit(std::span<const std::string> values, std::span<const std::string> declared = {}) {
    require(!values.empty() || !declared.empty(), ErrorKind::EmptyInput, "one-hot fit on empty input");
    OneHot enc;
    enc.categories_.assign(values.begin(), values.end());
    enc.categories_.insert(enc.categories_.end(), declared.begin(), declared.end());
    std::sort(enc.categories_.begin(), enc.categories_.end());
    enc.categories_.erase(std::unique(enc.categories_.begin(), enc.categories_.end()), enc.categories_.end());
    return enc;
  }

  static OneHot from_categories(std::vector<std::string> categories) {
    OneHot enc;
    enc.categories_ = std::move(categories);
    require(std::is_sorted(enc.categories_.begin(), enc.categories_.end()) &&
                std::adjacent_find(enc.categories_.begin(), enc.categories_.end()) == enc.categories_.end(),
            ErrorKind::Parse, "one-hot categories must be sorted and unique");
    return enc;
  }

  std::size_t index_of(const std::string& value) const {
    auto it = std::lower_bound(categories_.begin(), categories_.end(), value);
    require(it != categories_.end() && *it == value, ErrorKind::UnknownCategory,
            "category '" + value + "' was not seen at fit time");
    return static_cast<std::size_t>(it - categories_.begin());
  }

  void apply(const std::string& value, std::vector<double>& out) const {
    require(!categories_.empty(), ErrorKind::NotFitted, "one-hot encoder is not fitted");
    std::size_t hot = index_of(value);
    for (std::size_t i = 0; i < categories_.size(); ++i) out.push_back(i == hot ? 1.0 : 0.0);
  }

  std::size_t width() const { return categories_.size(); }
  const std::vector<std::string>& categories() const { return categories_; }

 private:
  std::vector<std::string> categories_;
};

/// (x - mean) / sd with the population sd; a constant feature maps to 0.
struct Standardizer {
  double mean = 0.0;
  double sd = 0.0;

  static Standardizer fit(std::span<const double> values) {
    require(!values.empty(), ErrorKind::EmptyInput, "standardizer fit on empty input");
    double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return {m, std::sqrt(ss / static_cast<double>(values.size()))};
  }

  double apply(double x) const { return sd > 0.0 ? (x - mean) / sd : 0.0; }
};

/// Static-row encoder: sample and waveform one-hot blocks followed by the
/// standardized frequency, pulse width and (optionally) baseline.
class Encoder {
 public:
  struct Domain {
    std::vector<std::string> sample_ids;
    std::vector<std::string> waveforms;
  };

  static Domain waveform_domain() {
    Domain d;
    for (auto w : stimgen::kAllWaveforms) d.waveforms.emplace_back(stimgen::to_string(w));
    return d;
  }

  /// Fit on the training partition only. Numeric statistics always come
  /// from `rows`; `domain` only widens the category lists.
  static Encoder fit(std::span<const StaticRow> rows, bool include_baseline, const Domain& domain = {}) {
    require(!rows.empty(), ErrorKind::EmptyInput, "encoder fit on empty input");
    std::vector<std::string> samples, waveforms;
    std::vector<double> freq, pw, base;
    for (const auto& r : rows) {
      samples.push_back(r.sample_id);
      waveforms.push_back(r.waveform);
      freq.push_back(r.frequency_Hz);
      pw.push_back(r.pulse_width_ms);
      if (include_baseline) {
        require(r.baseline_force_N.has_value(), ErrorKind::InvalidArgument,
                "row " + r.experiment_id + " lacks the baseline feature");
        base.push_back(*r.baseline_force_N);
      }
    }
    Encoder enc;
    enc.include_baseline_ = include_baseline;
    enc.sample_ = OneHot::fit(samples, domain.sample_ids);
    enc.waveform_ = OneHot::fit(waveforms, domain.waveforms);
    enc.frequency_ = Standardizer::fit(freq);
    enc.pulse_width_ = Standardizer::fit(pw);
    if (include_baseline) enc.baseline_ = Standardizer::fit(base);
    return enc;
  }

  std::vector<double> apply(const StaticRow& row) const {
    std::vector<double> out;
    out.reserve(width());
    sample_.apply(row.sample_id, out);
    waveform_.apply(row.waveform, out);
    out.push_back(frequency_.apply(row.frequency_Hz));
    out.push_back(pulse_width_.apply(row.pulse_width_ms));
    if (include_baseline_) {
      require(row.baseline_force_N.has_value(), ErrorKind::InvalidArgument,
              "row " + row.experiment_id + " lacks the baseline feature");
      out.push_back(baseline_.apply(*row.baseline_force_N));
    }
    return out;
  }

  std::size_t width() const { return sample_.width() + waveform_.width() + 2 + (include_baseline_ ? 1 : 0); }
  bool include_baseline() const { return include_baseline_; }
  const OneHot& sample_encoding() const { return sample_; }
  const OneHot& waveform_encoding() const { return waveform_; }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> names;
    for (const auto& c : sample_.categories()) names.push_back("sample=" + c);
    for (const auto& c : waveform_.categories()) names.push_back("waveform=" + c);
    names.push_back("frequency_Hz");
    names.push_back("pulse_width_ms");
    if (include_baseline_) names.push_back("baseline_force_N");
    return names;
  }

  nlohmann::json to_json() const {
    auto stat = [](const Standardizer& s) { return nlohmann::json{{"mean", s.mean}, {"sd", s.sd}}; };
    nlohmann::json j = {{"include_baseline", include_baseline_},
                        {"sample_categories", sample_.categories()},
                        {"waveform_categories", waveform_.categories()},
                        {"frequency_Hz", stat(frequency_)},
                        {"pulse_width_ms", stat(pulse_width_)}};
    if (include_baseline_) j["baseline_force_N"] = stat(baseline_);
    return j;
  }

  static Encoder from_json(const nlohmann::json& j) {
    try {
      auto stat = [](const nlohmann::json& s) { return Standardizer{s.at("mean").get<double>(), s.at("sd").get<double>()}; };
      Encoder enc;
      enc.include_baseline_ = j.at("include_baseline").get<bool>();
      enc.sample_ = OneHot::from_categories(j.at("sample_categories").get<std::vector<std::string>>());
      enc.waveform_ = OneHot::from_categories(j.at("waveform_categories").get<std::vector<std::string>>());
      enc.frequency_ = stat(j.at("frequency_Hz"));
      enc.pulse_width_ = stat(j.at("pulse_width_ms"));
      if (enc.include_baseline_) enc.baseline_ = stat(j.at("baseline_force_N"));
      return enc;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, std::string("encoder state: ") + e.what());
    }
  }

 private:
  bool include_baseline_ = false;
  OneHot sample_;
  OneHot waveform_;
  Standardizer frequency_;
  Standardizer pulse_width_;
  Standardizer baseline_;
};

// ---------------------------------------------------------------------------
// Min-max scaling

/// Maps [observed_min, observed_max] onto [0, 1] without clamping.
struct MinMaxScaler {
  double observed_min = 0.0;
  double observed_max = 1.0;

  static MinMaxScaler fit(std::span<const double> values) {
    require(!values.empty(), ErrorKind::EmptyInput, "min-max fit on empty input");
    auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {*lo, *hi};
  }

  bool degenerate() const { return observed_max == observed_min; }
  double apply(double x) const { return degenerate() ? 0.0 : (x - observed_min) / (observed_max - observed_min); }
  double invert(double y) const { return degenerate() ? observed_min : observed_min + y * (observed_max - observed_min); }

  nlohmann::json to_json() const { return {{"observed_min", observed_min}, {"observed_max", observed_max}}; }
  static MinMaxScaler from_json(const nlohmann::json& j) {
    return {j.at("observed_min").get<double>(), j.at("observed_max").get<double>()};
  }
};

// ---------------------------------------------------------------------------
// Partitions

enum class Partition : std::uint8_t { Train, Validation, Test };

constexpr std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Validation: return "validation";
    case Partition::Test: return "test";
  }
  return "train";
}

struct SplitAssignment {
  std::vector<Partition> labels;
  std::uint64_t seed = 0;

  std::size_t count(Partition p) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), p));
  }
  std::vector<std::size_t> indices(Partition p) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == p) out.push_back(i);
    return out;
  }
};

namespace detail {

inline void check_fractions(std::span<const double> fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    require(std::isfinite(f) && f >= 0.0, ErrorKind::InvalidArgument, "split fractions must be >= 0");
    sum += f;
  }
  require(std::abs(sum - 1.0) < 1e-9, ErrorKind::InvalidArgument, "split fractions must sum to 1");
}

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derive_rng(seed, {0x5b17});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Seeded shuffle, then contiguous slices of the given sizes in order.
inline SplitAssignment slice(std::size_t n, std::uint64_t seed, std::span<const std::size_t> sizes,
                             std::span<const Partition> parts) {
  SplitAssignment a;
  a.seed = seed;
  a.labels.assign(n, Partition::Train);
  auto order = shuffled(n, seed);
  std::size_t pos = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s)
    for (std::size_t k = 0; k < sizes[s]; ++k) a.labels[order[pos++]] = parts[s];
  return a;
}

// floor(x) that tolerates representation error just below an integer.
inline std::size_t floor_count(double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); }

}  // namespace detail

/// Two-way train/test split. The test size is ceil(test_fraction * n) and
/// train takes the rest (161 rows at 0.8/0.2 give 128/33).
inline SplitAssignment split_static(std::size_t n, std::uint64_t seed, double train_fraction = 0.8,
                                    double test_fraction = 0.2) {
  require(n > 0, ErrorKind::EmptyInput, "cannot split an empty dataset");
  const double fr[] = {train_fraction, test_fraction};
  detail::check_fractions(fr);
  std::size_t test = std::min(n, static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(n) - 1e-9)));
  const std::size_t sizes[] = {n - test, test};
  const Partition parts[] = {Partition::Train, Partition::Test};
  return detail::slice(n, seed, sizes, parts);
}

struct DynamicFractions {
  double train = 0.7;
  double validation = 0.15;
  double test = 0.15;
};

/// Three-way split: validation and test get floor(fraction * n), train gets
/// the remainder (122176 windows give 85524/18326/18326).
inline SplitAssignment split_dynamic(std::size_t n, std::uint64_t seed, DynamicFractions f = {}) {
  require(n > 0, ErrorKind::EmptyInput, "cannot split an empty dataset");
  const double fr[] = {f.train, f.validation, f.test};
  detail::check_fractions(fr);
  std::size_t val = detail::floor_count(f.validation * static_cast<double>(n));
  std::size_t test = detail::floor_count(f.test * static_cast<double>(n));
  const std::size_t sizes[] = {n - val - test, val, test};
  const Partition parts[] = {Partition::Train, Partition::Validation, Partition::Test};
  return detail::slice(n, seed, sizes, parts);
}

// ---------------------------------------------------------------------------
// Sliding windows

inline constexpr std::size_t kWindowWidth = 10;

struct WindowOrigin {
  std::size_t experiment = 0;  // index into the trace list
  std::size_t start = 0;       // first sample of the window
};

struct SlidingWindowSet {
  std::size_t width = kWindowWidth;
  std::vector<double> inputs;  // size() x width, row-major
  std::vector<double> targets;
  std::vector<WindowOrigin> origins;
  MinMaxScaler scaler{};
  bool scaled = false;

  std::size_t size() const { return targets.size(); }
  std::span<const double> window(std::size_t i) const { return {inputs.data() + i * width, width}; }
};

/// Every (width-sample window, next sample) pair with stride 1 inside each
/// trace; windows never straddle two experiments. Values are left unscaled.
inline SlidingWindowSet make_windows(std::span<const ForceTrace> traces, std::size_t width = kWindowWidth) {
  require(width >= 1, ErrorKind::InvalidArgument, "window width must be >= 1");
  SlidingWindowSet set;
  set.width = width;
  std::size_t total = 0;
  for (const auto& t : traces) {
    require(t.size() >= width + 1, ErrorKind::TraceTooShort,
            "trace " + t.experiment_id + " is too short for a window plus target");
    total += t.size() - width;
  }
  set.inputs.reserve(total * width);
  set.targets.reserve(total);
  set.origins.reserve(total);
  for (std::size_t e = 0; e < traces.size(); ++e) {
    const auto& f = traces[e].forces_N;
    for (std::size_t s = 0; s + width < f.size(); ++s) {
      set.inputs.insert(set.inputs.end(), f.begin() + static_cast<std::ptrdiff_t>(s),
                        f.begin() + static_cast<std::ptrdiff_t>(s + width));
      set.targets.push_back(f[s + width]);
      set.origins.push_back({e, s});
    }
  }
  return set;
}

/// Min-max scaler fitted on every value (inputs and target) of the windows
/// in partition `p`.
inline MinMaxScaler fit_minmax(const SlidingWindowSet& set, const SplitAssignment& split,
                               Partition p = Partition::Train) {
  require(split.labels.size() == set.size(), ErrorKind::LengthMismatch, "split does not match window set");
  double lo = INFINITY, hi = -INFINITY;
  bool any = false;
  for (std::size_t i = 0; i < set.size(); ++i) {
    if (split.labels[i] != p) continue;
    any = true;
    for (double v : set.window(i)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    lo = std::min(lo, set.targets[i]);
    hi = std::max(hi, set.targets[i]);
  }
  require(any, ErrorKind::EmptyInput, "no windows in the fitting partition");
  return {lo, hi};
}

inline void apply_scaler(SlidingWindowSet& set, const MinMaxScaler& scaler) {
  require(!set.scaled, ErrorKind::InvalidArgument, "window set is already scaled");
  for (double& v : set.inputs) v = scaler.apply(v);
  for (double& v : set.targets) v = scaler.apply(v);
  set.scaler = scaler;
  set.scaled = true;
}

/// Leakage-safe alternative to split_dynamic: whole experiments are assigned
/// to partitions and their windows inherit the label.
inline SplitAssignment split_dynamic_by_experiment(const SlidingWindowSet& set, std::size_t n_experiments,
                                                   std::uint64_t seed, DynamicFractions f = {}) {
  auto per_experiment = split_dynamic(n_experiments, seed, f);
  SplitAssignment a;
  a.seed = seed;
  a.labels.reserve(set.size());
  for (const auto& o : set.origins) a.labels.push_back(per_experiment.labels.at(o.experiment));
  return a;
}

}  // namespace biotwin::datakit
