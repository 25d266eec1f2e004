#pragma once

// Stimulation waveform synthesis: the four pulse shapes delivered by the
// current-controlled stimulator, staircase/ramp modulation of amplitude,
// pulse width and frequency, and charge accounting on the sampled output.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "biotwin/error.hpp"

namespace biotwin::stimgen {

enum class WaveformKind {
  Monophasic,
  BiphasicSymmetric,
  BiphasicAsymmetricBalanced,
  TriangularBiphasic,
};

inline constexpr std::array<WaveformKind, 4> kAllWaveforms = {
    WaveformKind::Monophasic, WaveformKind::BiphasicSymmetric,
    WaveformKind::BiphasicAsymmetricBalanced, WaveformKind::TriangularBiphasic};

constexpr std::string_view to_string(WaveformKind kind) {
  switch (kind) {
    case WaveformKind::Monophasic: return "monophasic";
    case WaveformKind::BiphasicSymmetric: return "biphasic_symmetric";
    case WaveformKind::BiphasicAsymmetricBalanced: return "biphasic_asymmetric";
    case WaveformKind::TriangularBiphasic: return "triangular_biphasic";
  }
  return "monophasic";
}

inline WaveformKind parse_waveform(std::string_view name) {
  for (auto kind : kAllWaveforms)
    if (to_string(kind) == name) return kind;
  throw Error(ErrorKind::Parse, "unknown waveform '" + std::string(name) + "'");
}

enum class ModulationKind { None, Staircase, LinearRamp };
enum class ModulatedParameter { Amplitude, PulseWidth, Frequency };

constexpr std::string_view to_string(ModulationKind kind) {
  switch (kind) {
    case ModulationKind::None: return "none";
    case ModulationKind::Staircase: return "staircase";
    case ModulationKind::LinearRamp: return "linear_ramp";
  }
  return "none";
}

constexpr std::string_view to_string(ModulatedParameter p) {
  switch (p) {
    case ModulatedParameter::Amplitude: return "amplitude";
    case ModulatedParameter::PulseWidth: return "pulse_width";
    case ModulatedParameter::Frequency: return "frequency";
  }
  return "amplitude";
}

inline ModulationKind parse_modulation_kind(std::string_view name) {
  for (auto k : {ModulationKind::None, ModulationKind::Staircase, ModulationKind::LinearRamp})
    if (to_string(k) == name) return k;
  throw Error(ErrorKind::Parse, "unknown modulation kind '" + std::string(name) + "'");
}

inline ModulatedParameter parse_modulated_parameter(std::string_view name) {
  for (auto p : {ModulatedParameter::Amplitude, ModulatedParameter::PulseWidth,
                 ModulatedParameter::Frequency})
    if (to_string(p) == name) return p;
  throw Error(ErrorKind::Parse, "unknown modulated parameter '" + std::string(name) + "'");
}

/// Units follow the modulated parameter: mA, ms or Hz.
struct ModulationSchedule {
  ModulationKind kind = ModulationKind::None;
  ModulatedParameter parameter = ModulatedParameter::Amplitude;
  double min_value = 0.0;
  double max_value = 0.0;
  int n_steps = 0;               // staircase only
  double step_duration_s = 0.0;  // staircase only
  double ramp_duration_s = 0.0;  // ramp only

  bool operator==(const ModulationSchedule&) const = default;
};

/// A stimulation experiment. When a parameter is modulated its nominal field
/// is kept as metadata and the schedule drives the delivered pulses.
struct StimulationProtocol {
  WaveformKind waveform = WaveformKind::Monophasic;
  double amplitude_mA = 18.0;
  double frequency_Hz = 1.0;
  double pulse_width_ms = 5.0;
  double duration_s = 10.0;
  ModulationSchedule modulation{};

  bool operator==(const StimulationProtocol&) const = default;
};

struct SampledSignal {
  double sample_rate_Hz = 0.0;
  std::vector<double> values;  // mA

  double duration_s() const { return static_cast<double>(values.size()) / sample_rate_Hz; }
};

/// One delivered pulse after modulation is applied.
struct Pulse {
  double start_s = 0.0;
  double amplitude_mA = 0.0;
  double pulse_width_ms = 0.0;
  double period_s = 0.0;
};

struct ModulationPoint {
  double time_offset_s = 0.0;
  double value = 0.0;
};

/// Recovery phase of the asymmetric waveform: amplitude / ratio for
/// ratio x pulse width, so both phases carry the same charge.
inline constexpr double kAsymmetricRecoveryRatio = 2.0;
inline constexpr double kDefaultSampleRateHz = 10'000.0;
inline constexpr double kFineSampleRateHz = 20'000.0;

/// Pulse envelope length in units of the pulse width.
constexpr double envelope_factor(WaveformKind kind) {
  switch (kind) {
    case WaveformKind::Monophasic: return 1.0;
    case WaveformKind::BiphasicSymmetric: return 2.0;
    case WaveformKind::BiphasicAsymmetricBalanced: return 1.0 + kAsymmetricRecoveryRatio;
    case WaveformKind::TriangularBiphasic: return 2.0;
  }
  return 1.0;
}

/// Largest pulse width that leaves a 1 ms gap before the next period.
inline double max_pulse_width_ms(WaveformKind kind, double frequency_Hz) {
  require(frequency_Hz > 0.0, ErrorKind::InvalidArgument, "frequency must be positive");
  return (1000.0 / frequency_Hz - 1.0) / envelope_factor(kind);
}

namespace detail {

inline constexpr double kTimeEps = 1e-9;

inline std::size_t complete_periods(double duration_s, double frequency_Hz) {
  return static_cast<std::size_t>(std::floor(duration_s * frequency_Hz + kTimeEps));
}

inline void validate_structure(const StimulationProtocol& p) {
  auto finite = [](double v) { return std::isfinite(v); };
  require(finite(p.amplitude_mA) && p.amplitude_mA >= 0.0, ErrorKind::InvalidArgument,
          "amplitude_mA must be finite and >= 0");
  require(finite(p.frequency_Hz) && p.frequency_Hz > 0.0, ErrorKind::InvalidArgument,
          "frequency_Hz must be finite and > 0");
  require(finite(p.pulse_width_ms) && p.pulse_width_ms > 0.0, ErrorKind::InvalidArgument,
          "pulse_width_ms must be finite and > 0");
  require(finite(p.duration_s) && p.duration_s > 0.0, ErrorKind::InvalidArgument,
          "duration_s must be finite and > 0");

  const auto& m = p.modulation;
  if (m.kind == ModulationKind::None) return;
  require(finite(m.min_value) && finite(m.max_value), ErrorKind::InvalidSchedule,
          "modulation bounds must be finite");
  require(m.min_value <= m.max_value, ErrorKind::InvalidSchedule,
          "modulation requires min_value <= max_value");
  if (m.parameter == ModulatedParameter::Amplitude) {
    require(m.min_value >= 0.0, ErrorKind::InvalidSchedule, "amplitude bounds must be >= 0");
  } else {
    require(m.min_value > 0.0, ErrorKind::InvalidSchedule,
            "pulse width and frequency bounds must be > 0");
  }
  if (m.kind == ModulationKind::Staircase) {
    require(m.parameter != ModulatedParameter::Frequency, ErrorKind::InvalidSchedule,
            "staircase modulation applies to amplitude or pulse width only");
    require(m.n_steps >= 2, ErrorKind::InvalidSchedule, "staircase requires n_steps >= 2");
    require(finite(m.step_duration_s) && m.step_duration_s > 0.0, ErrorKind::InvalidSchedule,
            "staircase requires step_duration_s > 0");
  } else {
    require(finite(m.ramp_duration_s) && m.ramp_duration_s > 0.0, ErrorKind::InvalidSchedule,
            "linear ramp requires ramp_duration_s > 0");
  }
}

inline double staircase_level(const ModulationSchedule& m, int step) {
  return m.min_value +
         static_cast<double>(step) * (m.max_value - m.min_value) / static_cast<double>(m.n_steps - 1);
}

inline double staircase_value_at(const ModulationSchedule& m, double t) {
  auto step = static_cast<long long>(std::floor(t / m.step_duration_s + kTimeEps));
  if (step >= m.n_steps) step = m.n_steps - 1;
  return staircase_level(m, static_cast<int>(step));
}

}  // namespace detail

/// Pulses actually delivered by the protocol, one per complete period that
/// fits inside duration_s. Validates structure but not envelope fit.
inline std::vector<Pulse> pulse_schedule(const StimulationProtocol& p) {
  detail::validate_structure(p);
  const auto& m = p.modulation;
  std::vector<Pulse> pulses;

  if (m.kind == ModulationKind::LinearRamp && m.parameter == ModulatedParameter::Frequency) {
    // Each pulse sets the period until the next one.
    const double span = m.max_value - m.min_value;
    double t = 0.0;
    while (true) {
      double f = m.min_value + span * std::min(1.0, t / m.ramp_duration_s);
      double period = 1.0 / f;
      if (t + period > p.duration_s + detail::kTimeEps) break;
      pulses.push_back({t, p.amplitude_mA, p.pulse_width_ms, period});
      t += period;
    }
    return pulses;
  }

  const double period = 1.0 / p.frequency_Hz;
  const std::size_t n = detail::complete_periods(p.duration_s, p.frequency_Hz);
  const std::size_t n_ramp =
      m.kind == ModulationKind::LinearRamp ? detail::complete_periods(m.ramp_duration_s, p.frequency_Hz) : 0;
  pulses.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    Pulse pulse{static_cast<double>(k) * period, p.amplitude_mA, p.pulse_width_ms, period};
    double value = 0.0;
    switch (m.kind) {
      case ModulationKind::None:
        pulses.push_back(pulse);
        continue;
      case ModulationKind::Staircase:
        value = detail::staircase_value_at(m, pulse.start_s);
        break;
      case ModulationKind::LinearRamp: {
        double frac = n_ramp >= 2 ? std::min(1.0, static_cast<double>(k) / static_cast<double>(n_ramp - 1)) : 1.0;
        value = frac >= 1.0 ? m.max_value : m.min_value + frac * (m.max_value - m.min_value);
        break;
      }
    }
    if (m.parameter == ModulatedParameter::Amplitude)
      pulse.amplitude_mA = value;
    else
      pulse.pulse_width_ms = value;
    pulses.push_back(pulse);
  }
  return pulses;
}

/// Full validation: structure plus every pulse envelope fitting its period.
inline void validate(const StimulationProtocol& p) {
  const double factor = envelope_factor(p.waveform);
  for (const auto& pulse : pulse_schedule(p)) {
    if (factor * pulse.pulse_width_ms / 1000.0 > pulse.period_s * (1.0 + 1e-12)) {
      throw Error(ErrorKind::PeriodOverflow,
                  "pulse envelope of " + std::to_string(factor * pulse.pulse_width_ms) +
                      " ms exceeds period of " + std::to_string(pulse.period_s * 1000.0) + " ms");
    }
  }
}

/// Staircase: the n_steps held levels (endpoint inclusive) with their onset
/// times. Ramp: one value per delivered pulse, held at max once reached.
inline std::vector<ModulationPoint> expand_modulation(const StimulationProtocol& p) {
  detail::validate_structure(p);
  const auto& m = p.modulation;
  require(m.kind != ModulationKind::None, ErrorKind::InvalidSchedule,
          "protocol has no modulation schedule");

  std::vector<ModulationPoint> out;
  if (m.kind == ModulationKind::Staircase) {
    out.reserve(static_cast<std::size_t>(m.n_steps));
    for (int k = 0; k < m.n_steps; ++k)
      out.push_back({k * m.step_duration_s, detail::staircase_level(m, k)});
    return out;
  }
  for (const auto& pulse : pulse_schedule(p)) {
    double v = 0.0;
    switch (m.parameter) {
      case ModulatedParameter::Amplitude: v = pulse.amplitude_mA; break;
      case ModulatedParameter::PulseWidth: v = pulse.pulse_width_ms; break;
      case ModulatedParameter::Frequency: v = 1.0 / pulse.period_s; break;
    }
    out.push_back({pulse.start_s, v});
  }
  return out;
}

/// Shortest pulse width the protocol can deliver.
inline double min_pulse_width_ms(const StimulationProtocol& p) {
  const auto& m = p.modulation;
  if (m.kind != ModulationKind::None && m.parameter == ModulatedParameter::PulseWidth)
    return m.min_value;
  return p.pulse_width_ms;
}

/// 10 kHz, or 20 kHz when a pulse shorter than 0.2 ms must be resolved.
inline double default_sample_rate(const StimulationProtocol& p) {
  return min_pulse_width_ms(p) < 0.2 ? kFineSampleRateHz : kDefaultSampleRateHz;
}

/// Discretizes the protocol. Pulses start at their period boundaries; phase
/// lengths are rounded to whole samples so every biphasic pulse is balanced
/// sample by sample.
inline SampledSignal sample_pulse_train(const StimulationProtocol& p, double sample_rate_Hz) {
  require(std::isfinite(sample_rate_Hz) && sample_rate_Hz > 0.0, ErrorKind::InvalidArgument,
          "sample rate must be positive");
  validate(p);
  require(min_pulse_width_ms(p) * sample_rate_Hz / 1000.0 >= 2.0 - 1e-9, ErrorKind::SampleRateTooLow,
          "sample rate " + std::to_string(sample_rate_Hz) + " Hz resolves a " +
              std::to_string(min_pulse_width_ms(p)) + " ms pulse with fewer than 2 samples");

  SampledSignal signal;
  signal.sample_rate_Hz = sample_rate_Hz;
  signal.values.assign(static_cast<std::size_t>(std::llround(p.duration_s * sample_rate_Hz)), 0.0);
  auto& v = signal.values;
  const auto total = static_cast<long long>(v.size());
  auto put = [&](long long idx, double value) {
    if (idx >= 0 && idx < total) v[static_cast<std::size_t>(idx)] = value;
  };

  for (const auto& pulse : pulse_schedule(p)) {
    if (pulse.amplitude_mA == 0.0) continue;
    const long long start = std::llround(pulse.start_s * sample_rate_Hz);
    const long long n = std::max(1LL, std::llround(pulse.pulse_width_ms * sample_rate_Hz / 1000.0));
    const double a = pulse.amplitude_mA;
    switch (p.waveform) {
      case WaveformKind::Monophasic:
        for (long long j = 0; j < n; ++j) put(start + j, a);
        break;
      case WaveformKind::BiphasicSymmetric:
        for (long long j = 0; j < n; ++j) {
          put(start + j, a);
          put(start + n + j, -a);
        }
        break;
      case WaveformKind::BiphasicAsymmetricBalanced: {
        const auto recovery = static_cast<long long>(kAsymmetricRecoveryRatio) * n;
        const double low = -a / kAsymmetricRecoveryRatio;
        for (long long j = 0; j < n; ++j) put(start + j, a);
        for (long long j = 0; j < recovery; ++j) put(start + n + j, low);
        break;
      }
      case WaveformKind::TriangularBiphasic:
        for (long long j = 0; j < n; ++j) {
          // Sampled at sub-interval midpoints so both lobes are mirror images.
          double x = 2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(n) - 1.0;
          double tri = a * (1.0 - std::abs(x));
          put(start + j, tri);
          put(start + n + j, -tri);
        }
        break;
    }
  }
  return signal;
}

/// Net delivered charge in microcoulombs (mA x ms): trapezoidal integral of
/// the signal extended by zero current before its first and after its last
/// sample.
inline double net_charge_uC(const SampledSignal& signal) {
  double sum = 0.0;
  for (double x : signal.values) sum += x;
  return sum * 1000.0 / signal.sample_rate_Hz;
}

/// Charge carried by one leading phase at the nominal settings.
inline double per_phase_charge_uC(const StimulationProtocol& p) {
  double q = p.amplitude_mA * p.pulse_width_ms;
  return p.waveform == WaveformKind::TriangularBiphasic ? 0.5 * q : q;
}

// Flat key/value record; modulation fields use dotted keys.
inline nlohmann::json to_json(const StimulationProtocol& p) {
  nlohmann::json j;
  j["waveform"] = std::string(to_string(p.waveform));
  j["amplitude_mA"] = p.amplitude_mA;
  j["frequency_Hz"] = p.frequency_Hz;
  j["pulse_width_ms"] = p.pulse_width_ms;
  j["duration_s"] = p.duration_s;
  j["modulation.kind"] = std::string(to_string(p.modulation.kind));
  j["modulation.parameter"] = std::string(to_string(p.modulation.parameter));
  j["modulation.min"] = p.modulation.min_value;
  j["modulation.max"] = p.modulation.max_value;
  j["modulation.n_steps"] = p.modulation.n_steps;
  j["modulation.step_duration_s"] = p.modulation.step_duration_s;
  j["modulation.ramp_duration_s"] = p.modulation.ramp_duration_s;
  return j;
}

inline StimulationProtocol protocol_from_json(const nlohmann::json& j) {
  try {
    StimulationProtocol p;
    p.waveform = parse_waveform(j.at("waveform").get<std::string>());
    p.amplitude_mA = j.at("amplitude_mA").get<double>();
    p.frequency_Hz = j.at("frequency_Hz").get<double>();
    p.pulse_width_ms = j.at("pulse_width_ms").get<double>();
    p.duration_s = j.at("duration_s").get<double>();
    auto& m = p.modulation;
    m.kind = parse_modulation_kind(j.value("modulation.kind", std::string("none")));
    m.parameter = parse_modulated_parameter(j.value("modulation.parameter", std::string("amplitude")));
    m.min_value = j.value("modulation.min", 0.0);
    m.max_value = j.value("modulation.max", 0.0);
    m.n_steps = j.value("modulation.n_steps", 0);
    m.step_duration_s = j.value("modulation.step_duration_s", 0.0);
    m.ramp_duration_s = j.value("modulation.ramp_duration_s", 0.0);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("protocol record: ") + e.what());
  }
}

}  // namespace biotwin::stimgen
