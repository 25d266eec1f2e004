#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "biotwin/stimgen.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace biotwin;
using namespace biotwin::stimgen;

namespace {

StimulationProtocol protocol(WaveformKind w, double amp, double f, double pw, double duration) {
  return {w, amp, f, pw, duration, {}};
}

StimulationProtocol random_protocol(std::mt19937_64& rng, WaveformKind w) {
  std::uniform_real_distribution<double> freq(1.0, 70.0), amp(0.5, 18.0), dur(0.5, 3.0), unit(0.0, 1.0);
  StimulationProtocol p;
  p.waveform = w;
  p.frequency_Hz = freq(rng);
  p.amplitude_mA = amp(rng);
  p.duration_s = dur(rng);
  const double lo = 0.2, hi = max_pulse_width_ms(w, p.frequency_Hz);
  p.pulse_width_ms = lo + unit(rng) * (hi - lo);
  return p;
}

}  // namespace

TEST(Stimgen, MonophasicOneHertzHasTenRectangularPulses) {
  auto p = protocol(WaveformKind::Monophasic, 18.0, 1.0, 5.0, 10.0);
  auto s = sample_pulse_train(p, 10'000.0);
  ASSERT_EQ(s.values.size(), 100'000u);
  EXPECT_EQ(oracle::rising_edges(s.values, 9.0), 10u);
  EXPECT_EQ(oracle::falling_edges(s.values, 1e-9), 0u);
  EXPECT_EQ(oracle::longest_run_above(s.values, 17.999), 50u);
  for (double v : s.values) EXPECT_TRUE(v == 0.0 || v == 18.0);
}

TEST(Stimgen, ZeroAmplitudeIsSilent) {
  for (auto w : kAllWaveforms) {
    auto s = sample_pulse_train(protocol(w, 0.0, 20.0, 5.0, 1.0), 10'000.0);
    for (double v : s.values) ASSERT_EQ(v, 0.0) << to_string(w);
  }
}

TEST(Stimgen, SymmetricFiftyHertzPulseCountAndPhaseWidth) {
  auto s = sample_pulse_train(protocol(WaveformKind::BiphasicSymmetric, 18.0, 50.0, 5.0, 1.0), 10'000.0);
  EXPECT_EQ(oracle::rising_edges(s.values, 9.0), 50u);
  EXPECT_EQ(oracle::falling_edges(s.values, 9.0), 50u);
  std::vector<double> negated(s.values.size());
  for (std::size_t i = 0; i < negated.size(); ++i) negated[i] = -s.values[i];
  EXPECT_EQ(oracle::longest_run_above(s.values, 17.999), 50u);
  EXPECT_EQ(oracle::longest_run_above(negated, 17.999), 50u);
}

TEST(Stimgen, AsymmetricRecoveryPhaseShape) {
  auto s = sample_pulse_train(protocol(WaveformKind::BiphasicAsymmetricBalanced, 12.0, 10.0, 2.0, 0.1), 10'000.0);
  // One pulse: 20 samples at +12, then 40 samples at -6.
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(s.values[i], 12.0);
  for (std::size_t i = 20; i < 60; ++i) EXPECT_EQ(s.values[i], -6.0);
  for (std::size_t i = 60; i < s.values.size(); ++i) EXPECT_EQ(s.values[i], 0.0);
}

TEST(Stimgen, TriangularLobesMirrorEachOther) {
  auto s = sample_pulse_train(protocol(WaveformKind::TriangularBiphasic, 10.0, 10.0, 2.0, 0.1), 10'000.0);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_GT(s.values[i], 0.0);
    EXPECT_DOUBLE_EQ(s.values[i], -s.values[20 + i]);
    EXPECT_NEAR(s.values[i], s.values[19 - i], 1e-12);
  }
}

TEST(Stimgen, StaircaseAmplitudeLevels) {
  auto p = protocol(WaveformKind::Monophasic, 18.0, 20.0, 5.0, 12.0);
  p.modulation = {ModulationKind::Staircase, ModulatedParameter::Amplitude, 3.0, 18.0, 6, 2.0, 0.0};
  auto pts = expand_modulation(p);
  ASSERT_EQ(pts.size(), 6u);
  for (int k = 0; k < 6; ++k) {
    EXPECT_DOUBLE_EQ(pts[static_cast<std::size_t>(k)].value, 3.0 + 3.0 * k);
    EXPECT_DOUBLE_EQ(pts[static_cast<std::size_t>(k)].time_offset_s, 2.0 * k);
  }
  // Delivered pulses follow the held levels.
  auto pulses = pulse_schedule(p);
  for (const auto& pulse : pulses) {
    int step = std::min(5, static_cast<int>(std::floor(pulse.start_s / 2.0 + 1e-9)));
    EXPECT_DOUBLE_EQ(pulse.amplitude_mA, 3.0 + 3.0 * step);
  }
}

TEST(Stimgen, DegenerateStaircaseIsConstant) {
  auto p = protocol(WaveformKind::Monophasic, 18.0, 20.0, 5.0, 8.0);
  p.modulation = {ModulationKind::Staircase, ModulatedParameter::PulseWidth, 4.0, 4.0, 4, 2.0, 0.0};
  for (const auto& pt : expand_modulation(p)) EXPECT_EQ(pt.value, 4.0);
}

TEST(Stimgen, PulseWidthRampReachesMaximum) {
  auto p = protocol(WaveformKind::Monophasic, 18.0, 50.0, 2.0, 10.0);
  p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::PulseWidth, 2.0, 20.0, 0, 0.0, 10.0};
  auto pts = expand_modulation(p);
  ASSERT_EQ(pts.size(), 500u);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    EXPECT_NEAR(pts[k].value, 2.0 + 18.0 * static_cast<double>(k) / 499.0, 1e-12);
    if (k > 0) EXPECT_GE(pts[k].value, pts[k - 1].value);
  }
  EXPECT_EQ(pts.back().value, 20.0);
}

TEST(Stimgen, RampHoldsAtMaximumAfterRampEnds) {
  auto p = protocol(WaveformKind::Monophasic, 18.0, 10.0, 2.0, 4.0);
  p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::Amplitude, 0.0, 12.0, 0, 0.0, 2.0};
  auto pts = expand_modulation(p);
  ASSERT_EQ(pts.size(), 40u);
  for (std::size_t k = 19; k < pts.size(); ++k) EXPECT_EQ(pts[k].value, 12.0);
}

TEST(Stimgen, FrequencyRampShortensPeriods) {
  auto p = protocol(WaveformKind::BiphasicSymmetric, 18.0, 50.0, 5.0, 20.0);
  p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::Frequency, 10.0, 50.0, 0, 0.0, 20.0};
  auto pts = expand_modulation(p);
  ASSERT_GT(pts.size(), 2u);
  EXPECT_DOUBLE_EQ(pts.front().value, 10.0);
  for (std::size_t k = 1; k < pts.size(); ++k) {
    EXPECT_GE(pts[k].value, pts[k - 1].value);
    EXPECT_LE(pts[k].value, 50.0);
    EXPECT_GT(pts[k].time_offset_s, pts[k - 1].time_offset_s);
  }
}

TEST(Stimgen, ModulationIsMonotoneAndBounded) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    auto p = protocol(WaveformKind::Monophasic, 18.0, 10.0 + 20.0 * u(rng), 1.0, 6.0);
    const bool stair = trial % 2 == 0;
    double lo = 1.0 + 5.0 * u(rng), hi = lo + 10.0 * u(rng);
    if (stair)
      p.modulation = {ModulationKind::Staircase, ModulatedParameter::Amplitude, lo, hi, 2 + trial % 7, 0.5, 0.0};
    else
      p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::Amplitude, lo, hi, 0, 0.0, 1.0 + 4.0 * u(rng)};
    auto pts = expand_modulation(p);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      EXPECT_GE(pts[k].value, lo);
      EXPECT_LE(pts[k].value, hi);
      if (k > 0) EXPECT_GE(pts[k].value, pts[k - 1].value);
    }
  }
}

TEST(Stimgen, MonophasicPulseCharge) {
  auto s = sample_pulse_train(protocol(WaveformKind::Monophasic, 18.0, 1.0, 5.0, 1.0), 10'000.0);
  EXPECT_NEAR(net_charge_uC(s), 90.0, 1e-9);
  EXPECT_NEAR(net_charge_uC(s), oracle::riemann_sum(s.values, 1000.0 / s.sample_rate_Hz), 1e-9);
}

TEST(Stimgen, BiphasicTrainsAreChargeBalanced) {
  for (auto w : {WaveformKind::BiphasicSymmetric, WaveformKind::BiphasicAsymmetricBalanced,
                 WaveformKind::TriangularBiphasic}) {
    auto p = protocol(w, 18.0, 30.0, 5.0, 2.0);
    auto s = sample_pulse_train(p, default_sample_rate(p));
    EXPECT_LT(std::abs(net_charge_uC(s)), 1e-6 * per_phase_charge_uC(p)) << to_string(w);
    EXPECT_LT(std::abs(oracle::riemann_sum(s.values, 1000.0 / s.sample_rate_Hz)), 1e-6 * per_phase_charge_uC(p));
  }
}

TEST(Stimgen, RandomProtocolsPulseCountsAndBalance) {
  std::mt19937_64 rng(5);
  for (auto w : kAllWaveforms) {
    for (int trial = 0; trial < 25; ++trial) {
      auto p = random_protocol(rng, w);
      auto s = sample_pulse_train(p, default_sample_rate(p));
      const auto expected = static_cast<std::size_t>(std::floor(p.duration_s * p.frequency_Hz + 1e-9));
      EXPECT_EQ(oracle::rising_edges(s.values, 1e-9 * p.amplitude_mA), expected);
      EXPECT_EQ(s.values.size(), static_cast<std::size_t>(std::llround(p.duration_s * s.sample_rate_Hz)));
      if (w != WaveformKind::Monophasic) {
        double phase = w == WaveformKind::TriangularBiphasic ? 0.5 : 1.0;
        EXPECT_LT(std::abs(net_charge_uC(s)), 1e-6 * phase * p.amplitude_mA * p.pulse_width_ms);
      }
    }
  }
}

TEST(Stimgen, DoublingTheSampleRateKeepsPulseCounts) {
  std::mt19937_64 rng(9);
  for (auto w : kAllWaveforms) {
    for (int trial = 0; trial < 10; ++trial) {
      auto p = random_protocol(rng, w);
      auto a = sample_pulse_train(p, 10'000.0);
      auto b = sample_pulse_train(p, 20'000.0);
      EXPECT_EQ(oracle::rising_edges(a.values, 1e-9 * p.amplitude_mA),
                oracle::rising_edges(b.values, 1e-9 * p.amplitude_mA));
    }
  }
}

TEST(Stimgen, MaxPulseWidthLeavesOneMillisecondGap) {
  EXPECT_DOUBLE_EQ(max_pulse_width_ms(WaveformKind::Monophasic, 50.0), 19.0);
  EXPECT_DOUBLE_EQ(max_pulse_width_ms(WaveformKind::BiphasicSymmetric, 50.0), 9.5);
  EXPECT_DOUBLE_EQ(max_pulse_width_ms(WaveformKind::TriangularBiphasic, 20.0), 24.5);
  EXPECT_DOUBLE_EQ(max_pulse_width_ms(WaveformKind::BiphasicAsymmetricBalanced, 50.0),
                   19.0 / (1.0 + kAsymmetricRecoveryRatio));
}

TEST(Stimgen, Errors) {
  EXPECT_ERROR_KIND(sample_pulse_train(protocol(WaveformKind::BiphasicSymmetric, 18, 50, 15, 1), 1e4),
                    ErrorKind::PeriodOverflow);
  EXPECT_ERROR_KIND(sample_pulse_train(protocol(WaveformKind::Monophasic, 18, 50, 0.1, 1), 1e4),
                    ErrorKind::SampleRateTooLow);
  EXPECT_NO_THROW(sample_pulse_train(protocol(WaveformKind::Monophasic, 18, 50, 0.1, 1), 2e4));

  auto p = protocol(WaveformKind::Monophasic, 18, 20, 5, 10);
  EXPECT_ERROR_KIND(expand_modulation(p), ErrorKind::InvalidSchedule);
  p.modulation = {ModulationKind::Staircase, ModulatedParameter::Frequency, 10, 20, 4, 1.0, 0.0};
  EXPECT_ERROR_KIND(expand_modulation(p), ErrorKind::InvalidSchedule);
  p.modulation = {ModulationKind::Staircase, ModulatedParameter::Amplitude, 10, 5, 4, 1.0, 0.0};
  EXPECT_ERROR_KIND(expand_modulation(p), ErrorKind::InvalidSchedule);
  p.modulation = {ModulationKind::Staircase, ModulatedParameter::Amplitude, 1, 5, 1, 1.0, 0.0};
  EXPECT_ERROR_KIND(expand_modulation(p), ErrorKind::InvalidSchedule);
  p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::Amplitude, 1, 5, 0, 0.0, 0.0};
  EXPECT_ERROR_KIND(expand_modulation(p), ErrorKind::InvalidSchedule);
  EXPECT_ERROR_KIND(validate(protocol(WaveformKind::Monophasic, -1, 20, 5, 10)), ErrorKind::InvalidArgument);
  EXPECT_ERROR_KIND(parse_waveform("square"), ErrorKind::Parse);
}

TEST(Stimgen, ProtocolRecordRoundTrip) {
  auto p = protocol(WaveformKind::TriangularBiphasic, 12.5, 35.0, 3.25, 20.0);
  p.modulation = {ModulationKind::LinearRamp, ModulatedParameter::PulseWidth, 0.1, 3.25, 0, 0.0, 20.0};
  auto j = to_json(p);
  EXPECT_EQ(j["modulation.kind"], "linear_ramp");
  EXPECT_EQ(protocol_from_json(nlohmann::json::parse(j.dump())), p);
  EXPECT_ERROR_KIND(protocol_from_json(nlohmann::json{{"waveform", "monophasic"}}), ErrorKind::Parse);
}
