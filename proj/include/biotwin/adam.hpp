#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>
#include <json.hpp>

#include "biotwin/error.hpp"

namespace biotwin {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for a flat parameter vector. They are sized on the
/// first step.
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
};

inline void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads) {
  require(params.size() == grads.size(), ErrorKind::ShapeMismatch,
          "parameter and gradient sizes differ: " + std::to_string(params.size()) + " vs " + std::to_string(grads.size()));
  if (state.m.size() == 0 && state.v.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorKind::ShapeMismatch,
          "optimizer state does not match the parameter vector");
  const auto& c = state.config;
  state.step += 1;
  state.m = c.beta1 * state.m + (1.0 - c.beta1) * grads;
  state.v = c.beta2 * state.v + (1.0 - c.beta2) * grads.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  params.array() -= c.learning_rate * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + c.epsilon);
}

inline nlohmann::json to_json(const AdamConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

inline AdamConfig adam_config_from_json(const nlohmann::json& j) {
  AdamConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  return c;
}

}  // namespace biotwin
