#pragma once

// Synthetic muscle-ring force simulator. Stands in for the lab recordings:
// a rectified, low-passed stimulus drives a first-order activation state
// whose power sets the force on top of a per-experiment baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "biotwin/error.hpp"
#include "biotwin/random.hpp"
#include "biotwin/stimgen.hpp"

namespace biotwin::mtwin {

using stimgen::StimulationProtocol;

inline constexpr double kSamplePeriodS = 0.04;
inline constexpr std::size_t kBaselineSamples = 10;

struct MuscleParams {
  std::string sample_id = "S1";
  double f_max_N = 1.2e-4;
  double baseline_N = 3.0e-5;
  double tau_rise_s = 0.005;
  double tau_fall_s = 0.2;
  double activation_exponent = 1.5;
  double excitability_mA = 5.0;  // filtered current giving half drive
  double noise_sd_N = 2.0e-6;
};

/// Shape constants of the drive nonlinearity, shared by every sample.
struct DriveModel {
  double filter_tau_s = 0.008;
  double slope_fraction = 0.3;  // sigmoid scale as a fraction of excitability
};

inline void validate(const MuscleParams& p) {
  auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  require(pos(p.f_max_N) && pos(p.tau_rise_s) && pos(p.tau_fall_s) && pos(p.excitability_mA),
          ErrorKind::InvalidArgument, "muscle parameters must be positive");
  require(std::isfinite(p.baseline_N) && p.baseline_N >= 0.0, ErrorKind::InvalidArgument,
          "baseline_N must be >= 0");
  require(std::isfinite(p.noise_sd_N) && p.noise_sd_N >= 0.0, ErrorKind::InvalidArgument,
          "noise_sd_N must be >= 0");
  require(p.tau_fall_s >= p.tau_rise_s, ErrorKind::InvalidArgument, "tau_fall_s must be >= tau_rise_s");
  require(p.activation_exponent >= 1.0, ErrorKind::InvalidArgument, "activation_exponent must be >= 1");
}

struct ForceTrace {
  double sample_period_s = kSamplePeriodS;
  std::vector<double> forces_N;
  std::string experiment_id;
  std::string sample_id;
  StimulationProtocol protocol;
  double quiet_period_s = 0.0;

  std::size_t size() const { return forces_N.size(); }
  double time_at(std::size_t k) const { return static_cast<double>(k) * sample_period_s; }
};

inline std::size_t steps_for(double seconds) {
  return static_cast<std::size_t>(std::llround(seconds / kSamplePeriodS));
}

namespace detail {

struct DriveCurve {
  double center, scale, offset, gain;

  DriveCurve(double excitability, const DriveModel& model)
      : center(excitability), scale(model.slope_fraction * excitability) {
    offset = logistic(-center / scale);
    gain = 1.0 / (1.0 - offset);
  }

  static double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

  // Zero filtered current gives exactly zero drive.
  double operator()(double filtered) const {
    return std::max(0.0, (logistic((filtered - center) / scale) - offset) * gain);
  }
};

}  // namespace detail

/// Simulates one recording: quiet_period_s of unstimulated baseline, the
/// protocol, then tail_s of relaxation, sampled every 0.04 s. The stimulus is
/// integrated with fixed-step RK4 at its own sample rate.
inline ForceTrace simulate_force(const StimulationProtocol& protocol, const MuscleParams& params,
                                 double quiet_period_s, std::uint64_t seed, double tail_s = 0.0,
                                 const DriveModel& model = {}) {
  require(std::isfinite(quiet_period_s) && quiet_period_s >= kBaselineSamples * kSamplePeriodS - 1e-9,
          ErrorKind::InvalidQuietPeriod, "quiet period must be at least 0.4 s");
  require(std::isfinite(tail_s) && tail_s >= 0.0, ErrorKind::InvalidArgument, "tail must be >= 0");
  validate(params);

  const double rate = stimgen::default_sample_rate(protocol);
  const auto signal = stimgen::sample_pulse_train(protocol, rate);
  const auto per_sample = static_cast<std::size_t>(std::llround(rate * kSamplePeriodS));

  const std::size_t quiet_steps = steps_for(quiet_period_s);
  const std::size_t n = quiet_steps + steps_for(protocol.duration_s) + steps_for(tail_s);
  const std::size_t stim_offset = quiet_steps * per_sample;

  ForceTrace trace;
  trace.sample_id = params.sample_id;
  trace.protocol = protocol;
  trace.quiet_period_s = quiet_period_s;
  trace.forces_N.resize(n);

  const detail::DriveCurve drive(params.excitability_mA, model);
  const double dt = 1.0 / rate;
  const double inv_filter = 1.0 / model.filter_tau_s;
  const double inv_rise = 1.0 / params.tau_rise_s;
  const double inv_fall = 1.0 / params.tau_fall_s;

  double filtered = 0.0;
  double activation = 0.0;
  auto deriv = [&](double x, double a, double current, double& dx, double& da) {
    dx = (current - x) * inv_filter;
    double u = drive(x);
    da = (u - a) * (u > a ? inv_rise : inv_fall);
  };

  Rng rng = derive_rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (std::size_t k = 0; k < n; ++k) {
    double force = params.baseline_N + params.f_max_N * std::pow(activation, params.activation_exponent);
    double eps = noise(rng);
    trace.forces_N[k] = force + params.noise_sd_N * eps;

    for (std::size_t j = 0; j < per_sample; ++j) {
      std::size_t idx = k * per_sample + j;
      double current = 0.0;
      if (idx >= stim_offset && idx - stim_offset < signal.values.size())
        current = std::abs(signal.values[idx - stim_offset]);
      if (current == 0.0 && filtered == 0.0 && activation == 0.0) continue;

      double k1x, k1a, k2x, k2a, k3x, k3a, k4x, k4a;
      deriv(filtered, activation, current, k1x, k1a);
      deriv(filtered + 0.5 * dt * k1x, activation + 0.5 * dt * k1a, current, k2x, k2a);
      deriv(filtered + 0.5 * dt * k2x, activation + 0.5 * dt * k2a, current, k3x, k3a);
      deriv(filtered + dt * k3x, activation + dt * k3a, current, k4x, k4a);
      filtered += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
      activation += dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
      activation = std::clamp(activation, 0.0, 1.0);
    }
  }
  return trace;
}

/// max - min of the samples with time in [from_s, to_s).
inline double peak_to_trough(const ForceTrace& trace, double from_s, double to_s) {
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    double t = trace.time_at(k);
    if (t + 1e-9 < from_s || t + 1e-9 >= to_s) continue;
    lo = std::min(lo, trace.forces_N[k]);
    hi = std::max(hi, trace.forces_N[k]);
  }
  require(hi >= lo, ErrorKind::InvalidArgument, "empty ripple window");
  return hi - lo;
}

// ---------------------------------------------------------------------------
// Corpus generation

struct CorpusEntry {
  StimulationProtocol protocol;
  std::string sample_id;
  int count = 1;
  double tail_s = 0.0;
};

struct CorpusSpec {
  std::vector<CorpusEntry> entries;
  double quiet_period_s = 4.0;
  std::uint64_t seed = 0;
  MuscleParams nominal{};          // sample_id ignored
  double sample_variability = 0.3;  // +- fraction on tissue size (f_max and baseline) and excitability
  double baseline_jitter = 0.0;     // +- fraction on the per-experiment tissue condition
  double condition_coupling = 0.3;  // share of the condition factor applied to f_max
  bool noise_free = false;

  std::size_t experiment_count() const {
    std::size_t total = 0;
    for (const auto& e : entries) total += static_cast<std::size_t>(std::max(e.count, 0));
    return total;
  }
};

inline void validate(const CorpusSpec& spec) {
  require(!spec.entries.empty(), ErrorKind::EmptyInput, "corpus spec has no entries");
  for (const auto& e : spec.entries) {
    require(e.count > 0, ErrorKind::InvalidArgument, "corpus entry counts must be positive");
    require(!e.sample_id.empty(), ErrorKind::InvalidArgument, "corpus entry needs a sample_id");
    stimgen::validate(e.protocol);
  }
  require(spec.sample_variability >= 0.0 && spec.sample_variability < 1.0, ErrorKind::InvalidArgument,
          "sample_variability must lie in [0, 1)");
  require(spec.baseline_jitter >= 0.0 && spec.baseline_jitter < 1.0, ErrorKind::InvalidArgument,
          "baseline_jitter must lie in [0, 1)");
  require(spec.condition_coupling >= 0.0 && spec.condition_coupling <= 1.0, ErrorKind::InvalidArgument,
          "condition_coupling must lie in [0, 1]");
  validate(spec.nominal);
}

/// Per-sample parameters, drawn once from (seed, sample_id). Passive and
/// active force share one tissue-size factor.
inline MuscleParams draw_sample_params(const CorpusSpec& spec, const std::string& sample_id) {
  Rng rng = derive_rng(spec.seed, {0x5a3e, stable_hash(sample_id)});
  std::uniform_real_distribution<double> factor(1.0 - spec.sample_variability, 1.0 + spec.sample_variability);
  MuscleParams p = spec.nominal;
  p.sample_id = sample_id;
  const double size = factor(rng);
  p.f_max_N *= size;
  p.baseline_N *= size;
  p.excitability_mA *= factor(rng);
  if (spec.noise_free) p.noise_sd_N = 0.0;
  return p;
}

/// Trace length in samples of every experiment, in corpus order.
inline std::vector<std::size_t> corpus_lengths(const CorpusSpec& spec) {
  std::vector<std::size_t> lengths;
  for (const auto& e : spec.entries) {
    std::size_t len = steps_for(spec.quiet_period_s) + steps_for(e.protocol.duration_s) + steps_for(e.tail_s);
    lengths.insert(lengths.end(), static_cast<std::size_t>(e.count), len);
  }
  return lengths;
}

inline std::string experiment_id(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "E%03zu", index);
  return buf;
}

/// One trace per requested experiment. Experiment seeds derive from
/// (seed, experiment index), so the output does not depend on scheduling.
inline std::vector<ForceTrace> generate_corpus(const CorpusSpec& spec, unsigned threads = 0) {
  validate(spec);

  struct Job {
    const CorpusEntry* entry;
    std::size_t index;
  };
  std::vector<Job> jobs;
  std::map<std::string, MuscleParams> samples;
  for (const auto& e : spec.entries) {
    if (!samples.contains(e.sample_id)) samples.emplace(e.sample_id, draw_sample_params(spec, e.sample_id));
    for (int c = 0; c < e.count; ++c) jobs.push_back({&e, jobs.size()});
  }

  std::vector<ForceTrace> corpus(jobs.size());
  auto run = [&](std::size_t i) {
    const auto& job = jobs[i];
    Rng rng = derive_rng(spec.seed, {0xe4e7, job.index});
    std::uniform_real_distribution<double> jitter(1.0 - spec.baseline_jitter, 1.0 + spec.baseline_jitter);
    MuscleParams params = samples.at(job.entry->sample_id);
    // Tissue condition on the day: scales the passive baseline fully and
    // active strength partially.
    const double condition = jitter(rng);
    params.baseline_N *= condition;
    params.f_max_N *= 1.0 + spec.condition_coupling * (condition - 1.0);
    corpus[i] = simulate_force(job.entry->protocol, params, spec.quiet_period_s, rng(), job.entry->tail_s);
    corpus[i].experiment_id = experiment_id(job.index);
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(jobs.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run(i);
    return corpus;
  }
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < jobs.size(); i += threads) run(i);
    });
  pool.clear();
  return corpus;
}

// ---------------------------------------------------------------------------
// Default corpus

inline constexpr std::size_t kDefaultExperiments = 161;
inline constexpr std::size_t kDefaultTotalSteps = 123786;

namespace detail {

// Hands out the counts of one protocol round-robin over a group's samples.
struct GroupBuilder {
  std::vector<CorpusEntry>& entries;
  std::vector<std::string> samples;
  std::size_t cursor = 0;

  void add(const StimulationProtocol& p, int count) {
    std::map<std::string, int> per_sample;
    for (int i = 0; i < count; ++i) per_sample[samples[cursor++ % samples.size()]] += 1;
    for (const auto& [id, c] : per_sample) entries.push_back({p, id, c, 0.0});
  }
};

inline StimulationProtocol tetanic(stimgen::WaveformKind w, double f, double pw, double duration = 10.0) {
  return {w, 18.0, f, pw, duration, {}};
}

inline StimulationProtocol with(StimulationProtocol p, stimgen::ModulationKind kind,
                                stimgen::ModulatedParameter param, double lo, double hi) {
  p.modulation.kind = kind;
  p.modulation.parameter = param;
  p.modulation.min_value = lo;
  p.modulation.max_value = hi;
  if (kind == stimgen::ModulationKind::Staircase) {
    p.modulation.n_steps = 6;
    p.modulation.step_duration_s = 2.0;
    p.duration_s = 12.0;
  } else {
    p.modulation.ramp_duration_s = p.duration_s;
  }
  return p;
}

}  // namespace detail

/// 161 experiments over samples S1..S15 whose nominal frequency and pulse
/// width counts reproduce the dataset's distributions (50 Hz x69, 30 x48,
/// 20 x30, 35 x12, 70 x1, 25 x1; PW 15 ms x53, 5 x41, 20 x17, 10 x15, 8 x13,
/// 40 x10, 30 x9, 28 x3) and whose traces total 123786 samples.
inline CorpusSpec default_corpus_spec(std::uint64_t seed = 0) {
  using stimgen::ModulatedParameter;
  using stimgen::ModulationKind;
  using W = stimgen::WaveformKind;
  using detail::tetanic;
  using detail::with;
  constexpr auto Mono = W::Monophasic;
  constexpr auto Sym = W::BiphasicSymmetric;
  constexpr auto Asym = W::BiphasicAsymmetricBalanced;
  constexpr auto Tri = W::TriangularBiphasic;

  CorpusSpec spec;
  spec.seed = seed;
  auto& e = spec.entries;

  // Unmodulated tetanic trains.
  detail::GroupBuilder g1{e, {"S4", "S5", "S6"}};
  g1.add(tetanic(Mono, 20, 40), 10);
  g1.add(tetanic(Mono, 70, 5), 1);
  g1.add(tetanic(Asym, 25, 10), 1);
  g1.add(tetanic(Mono, 30, 28), 3);
  g1.add(tetanic(Mono, 50, 15), 6);
  g1.add(tetanic(Asym, 50, 5), 5);
  g1.add(tetanic(Tri, 50, 5), 5);

  // Linear amplitude ramp 0-18 mA over 80 s.
  detail::GroupBuilder g2{e, {"S1", "S2", "S3"}};
  auto amp_ramp = [](W w) {
    return with(tetanic(w, 50, 5, 80.0), ModulationKind::LinearRamp, ModulatedParameter::Amplitude, 0, 18);
  };
  g2.add(amp_ramp(Sym), 3);
  g2.add(amp_ramp(Asym), 2);

  // Amplitude staircase 3-18 mA, 6 steps of 2 s.
  detail::GroupBuilder g3{e, {"S7", "S8", "S9"}};
  auto amp_stair = [](W w, double f, double pw) {
    return with(tetanic(w, f, pw), ModulationKind::Staircase, ModulatedParameter::Amplitude, 3, 18);
  };
  g3.add(amp_stair(Mono, 20, 30), 9);
  g3.add(amp_stair(Mono, 30, 20), 6);
  for (auto w : {Sym, Tri, Mono}) g3.add(amp_stair(w, 30, 15), 4);
  for (auto w : {Sym, Tri, Mono}) g3.add(amp_stair(w, 50, 5), 4);

  // Pulse-width staircase from 2 ms to the nominal width.
  detail::GroupBuilder g4{e, {"S13", "S14", "S15"}};
  auto pw_stair = [](W w, double f, double pw) {
    return with(tetanic(w, f, pw), ModulationKind::Staircase, ModulatedParameter::PulseWidth, 2, pw);
  };
  for (auto w : {Mono, Sym}) g4.add(pw_stair(w, 20, 20), 2);
  for (auto w : {Sym, Mono}) g4.add(pw_stair(w, 30, 15), 2);
  g4.add(pw_stair(Asym, 30, 10), 8);
  g4.add(pw_stair(Sym, 30, 10), 4);
  g4.add(pw_stair(Mono, 50, 15), 14);
  g4.add(pw_stair(Sym, 50, 8), 3);
  g4.add(pw_stair(Tri, 50, 8), 2);

  // Linear pulse-width ramps, symmetric biphasic.
  detail::GroupBuilder g5{e, {"S13", "S14"}};
  g5.add(with(tetanic(Sym, 35, 5), ModulationKind::LinearRamp, ModulatedParameter::PulseWidth, 0.1, 5), 4);
  g5.add(with(tetanic(Sym, 30, 10, 20.0), ModulationKind::LinearRamp, ModulatedParameter::PulseWidth, 2, 10), 2);
  g5.add(with(tetanic(Sym, 50, 8), ModulationKind::LinearRamp, ModulatedParameter::PulseWidth, 0.1, 8), 1);

  // Linear frequency ramps over 20 s; nominal frequency is the ramp maximum.
  detail::GroupBuilder g6{e, {"S10", "S11", "S12"}};
  auto f_ramp = [](W w, double lo, double hi, double pw) {
    return with(tetanic(w, hi, pw, 20.0), ModulationKind::LinearRamp, ModulatedParameter::Frequency, lo, hi);
  };
  g6.add(f_ramp(Sym, 10, 20, 20), 4);
  g6.add(f_ramp(Tri, 10, 20, 20), 3);
  g6.add(f_ramp(Sym, 10, 30, 15), 5);
  g6.add(f_ramp(Tri, 10, 30, 15), 4);
  g6.add(f_ramp(Sym, 10, 50, 8), 4);
  g6.add(f_ramp(Tri, 10, 50, 8), 3);
  g6.add(f_ramp(Mono, 20, 35, 15), 8);
  g6.add(f_ramp(Asym, 35, 50, 5), 5);
  g6.add(f_ramp(Mono, 35, 50, 5), 4);

  // Relaxation tails fill the recording budget; the single 70 Hz run takes
  // the remainder.
  std::size_t used = 0;
  for (auto len : corpus_lengths(spec)) used += len;
  const std::size_t spare = kDefaultTotalSteps - used;
  const std::size_t n = spec.experiment_count();
  for (auto& entry : e) entry.tail_s = static_cast<double>(spare / n) * kSamplePeriodS;
  for (auto& entry : e)
    if (entry.protocol.frequency_Hz == 70.0)
      entry.tail_s = static_cast<double>(spare / n + spare % n) * kSamplePeriodS;
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const MuscleParams& p) {
  return {{"sample_id", p.sample_id},           {"f_max_N", p.f_max_N},
          {"baseline_N", p.baseline_N},         {"tau_rise_s", p.tau_rise_s},
          {"tau_fall_s", p.tau_fall_s},         {"activation_exponent", p.activation_exponent},
          {"excitability_mA", p.excitability_mA}, {"noise_sd_N", p.noise_sd_N}};
}

inline MuscleParams muscle_params_from_json(const nlohmann::json& j, MuscleParams p = {}) {
  p.sample_id = j.value("sample_id", p.sample_id);
  p.f_max_N = j.value("f_max_N", p.f_max_N);
  p.baseline_N = j.value("baseline_N", p.baseline_N);
  p.tau_rise_s = j.value("tau_rise_s", p.tau_rise_s);
  p.tau_fall_s = j.value("tau_fall_s", p.tau_fall_s);
  p.activation_exponent = j.value("activation_exponent", p.activation_exponent);
  p.excitability_mA = j.value("excitability_mA", p.excitability_mA);
  p.noise_sd_N = j.value("noise_sd_N", p.noise_sd_N);
  return p;
}

inline nlohmann::json to_json(const CorpusSpec& spec) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : spec.entries)
    entries.push_back({{"protocol", stimgen::to_json(e.protocol)},
                       {"sample_id", e.sample_id},
                       {"count", e.count},
                       {"tail_s", e.tail_s}});
  return {{"entries", entries},
          {"quiet_period_s", spec.quiet_period_s},
          {"seed", spec.seed},
          {"nominal", to_json(spec.nominal)},
          {"sample_variability", spec.sample_variability},
          {"baseline_jitter", spec.baseline_jitter},
          {"condition_coupling", spec.condition_coupling},
          {"noise_free", spec.noise_free}};
}

inline CorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  try {
    CorpusSpec spec;
    for (const auto& e : j.at("entries"))
      spec.entries.push_back({stimgen::protocol_from_json(e.at("protocol")), e.at("sample_id").get<std::string>(),
                              e.value("count", 1), e.value("tail_s", 0.0)});
    spec.quiet_period_s = j.value("quiet_period_s", spec.quiet_period_s);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("nominal")) spec.nominal = muscle_params_from_json(j.at("nominal"));
    spec.sample_variability = j.value("sample_variability", spec.sample_variability);
    spec.baseline_jitter = j.value("baseline_jitter", spec.baseline_jitter);
    spec.condition_coupling = j.value("condition_coupling", spec.condition_coupling);
    spec.noise_free = j.value("noise_free", spec.noise_free);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("corpus spec: ") + e.what());
  }
}

}  // namespace biotwin::mtwin
