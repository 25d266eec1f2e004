#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "biotwin/adam.hpp"
#include "biotwin/neural.hpp"
#include "grad_check.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace biotwin;
using namespace biotwin::neural;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

std::vector<double> row_of(const Matrix& x, Eigen::Index r) {
  std::vector<double> v(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) v[static_cast<std::size_t>(j)] = x(r, j);
  return v;
}

std::vector<datakit::StaticRow> toy_rows(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const char* samples[] = {"S1", "S2", "S3", "S4"};
  const char* waves[] = {"monophasic", "biphasic_symmetric", "triangular_biphasic"};
  std::vector<datakit::StaticRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    double f = 20 + 30 * u(rng), pw = 2 + 10 * u(rng), base = 2e-5 + 2e-5 * u(rng);
    double target = base + 1e-4 * (f / 50.0) * std::sqrt(pw / 12.0);
    rows.push_back({"E" + std::to_string(i), samples[i % 4], waves[i % 3], f, pw, base, target});
  }
  return rows;
}

}  // namespace

TEST(Neural, InitShapesAndCounts) {
  auto m = init_mlp(21, 3);
  EXPECT_EQ(m.sizes, (std::vector<int>{21, 68, 50, 30, 10, 1}));
  EXPECT_EQ(m.weight(0).rows(), 68);
  EXPECT_EQ(m.weight(0).cols(), 21);
  EXPECT_EQ(parameter_count(m.sizes), 21 * 68 + 68 + 68 * 50 + 50 + 50 * 30 + 30 + 30 * 10 + 10 + 10 * 1 + 1);
  EXPECT_EQ(m.params.size(), 6797);
  for (std::size_t l = 0; l < m.layers(); ++l) EXPECT_TRUE(m.bias(l).isZero());
  EXPECT_EQ(init_mlp(21, 3).params, m.params);
  EXPECT_NE(init_mlp(21, 4).params, m.params);
}

TEST(Neural, InitVarianceFollowsFanIn) {
  auto m = init_mlp(200, 1, {400});
  auto w = m.weight(0);
  double ss = w.squaredNorm() / static_cast<double>(w.size());
  EXPECT_NEAR(ss, 2.0 / 200.0, 0.05 * 2.0 / 200.0);
}

TEST(Neural, ZeroParametersGiveZero) {
  auto m = zero_mlp(default_sizes(5));
  std::vector<double> x{1, -2, 3, 4, 5};
  EXPECT_EQ(forward(m, x), 0.0);
}

TEST(Neural, IdentityChain) {
  auto m = zero_mlp({1, 1, 1, 1, 1, 1});
  for (std::size_t l = 0; l < m.layers(); ++l) m.weight(l)(0, 0) = 1.0;
  std::vector<double> x{2.0};
  EXPECT_EQ(forward(m, x), 2.0);
}

TEST(Neural, ForwardMatchesReferenceImplementation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = init_mlp(21, seed);
    for (std::size_t l = 0; l < m.layers(); ++l) m.bias(l).setRandom();
    auto net = grad_check::to_net(m);
    Matrix x = random_matrix(8, 21, 100 + seed);
    auto batch = forward_batch(m, x);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double want = oracle::net_forward(net, row_of(x, r));
      EXPECT_NEAR(forward(m, row_of(x, r)), want, 1e-12 * std::max(1.0, std::abs(want)));
      EXPECT_NEAR(batch[static_cast<std::size_t>(r)], want, 1e-12 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST(Neural, WidthMismatch) {
  auto m = init_mlp(4, 0);
  std::vector<double> x{1, 2, 3};
  EXPECT_ERROR_KIND(forward(m, x), ErrorKind::WidthMismatch);
  EXPECT_ERROR_KIND(backward(m, Matrix::Zero(2, 3), std::vector<double>{0, 0}), ErrorKind::WidthMismatch);
}

TEST(Neural, ZeroErrorGivesZeroGradient) {
  auto m = init_mlp(6, 2, {5, 4});
  Matrix x = random_matrix(7, 6, 3);
  auto y = forward_batch(m, x);
  auto g = backward(m, x, y);
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_TRUE(g.params.isZero());
}

TEST(Neural, GradientsMatchFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, grad_check::mlp_instance(seed).max_relative_error);
  EXPECT_LT(worst, 1e-4);
}

TEST(Neural, BatchGradientIsMeanOfSingleGradients) {
  auto m = init_mlp(5, 7, {6, 3});
  Matrix x = random_matrix(2, 5, 8);
  std::vector<double> y{0.3, -0.4};
  auto both = backward(m, x, y);
  auto first = backward(m, x.topRows(1), std::vector<double>{y[0]});
  auto second = backward(m, x.bottomRows(1), std::vector<double>{y[1]});
  EXPECT_TRUE(both.params.isApprox(0.5 * (first.params + second.params), 1e-12));
  EXPECT_NEAR(both.loss, 0.5 * (first.loss + second.loss), 1e-15);
}

TEST(Neural, OutputIsHomogeneousInTheLastLayer) {
  auto m = init_mlp(9, 4);
  m.bias(m.layers() - 1)(0) = 0.25;
  Matrix x = random_matrix(5, 9, 6);
  auto before = forward_batch(m, x);
  auto scaled = m;
  scaled.weight(m.layers() - 1) *= -3.5;
  scaled.bias(m.layers() - 1) *= -3.5;
  auto after = forward_batch(scaled, x);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(after[i], -3.5 * before[i], 1e-12);
}

TEST(Adam, ZeroGradientAndZeroRateLeaveParameters) {
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1, 1);
  const Eigen::VectorXd keep = p;
  AdamState s;
  adam_step(s, p, Eigen::VectorXd::Zero(5));
  EXPECT_EQ(p, keep);
  EXPECT_EQ(s.step, 1);
  AdamState frozen{{0.0}, 0, {}, {}};
  adam_step(frozen, p, Eigen::VectorXd::Ones(5));
  EXPECT_EQ(p, keep);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  AdamConfig c;
  Eigen::VectorXd g(6);
  g << 3.0, -2e-3, 1e-7, -5.0, 4e-9, 0.5;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(6);
  AdamState s{c, 0, {}, {}};
  adam_step(s, p, g);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    double expected = -c.learning_rate * (g(i) > 0 ? 1.0 : -1.0);
    EXPECT_LE(std::abs(p(i) - expected), std::abs(c.learning_rate * c.epsilon / (std::abs(g(i)) + c.epsilon)) + 1e-18);
  }
}

TEST(Adam, MinimizesParabola) {
  AdamState s{{0.1}, 0, {}, {}};
  Eigen::VectorXd x(1);
  x << 1.0;
  int steps = 0;
  while (std::abs(x(0)) >= 1e-2 && steps < 500) {
    Eigen::VectorXd g = 2.0 * x;
    adam_step(s, x, g);
    ++steps;
  }
  EXPECT_LT(std::abs(x(0)), 1e-2);
  EXPECT_LE(steps, 500);
}

TEST(Adam, ShapeMismatch) {
  AdamState s;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  EXPECT_ERROR_KIND(adam_step(s, p, Eigen::VectorXd::Zero(4)), ErrorKind::ShapeMismatch);
}

TEST(Neural, MemorizesOneRow) {
  Matrix x = random_matrix(1, 4, 1);
  std::vector<double> y{0.7};
  TrainConfig c;
  c.epochs = 3000;
  c.adam.learning_rate = 1e-2;
  auto r = train_mlp(x, y, c, 5);
  EXPECT_LT(r.history.back(), 1e-10);
}

TEST(Neural, TrainingReducesLossAndIsDeterministic) {
  auto rows = toy_rows(100, 2);
  TrainConfig c;
  auto a = train_static(rows, c, true, 9, datakit::Encoder::waveform_domain());
  auto b = train_static(rows, c, true, 9, datakit::Encoder::waveform_domain());
  ASSERT_EQ(a.history.size(), 51u);
  EXPECT_LT(a.history.back(), a.history.front());
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.network.model.params, b.network.model.params);
  auto plain = train_static(rows, c, false, 9, datakit::Encoder::waveform_domain());
  EXPECT_EQ(a.network.model.input_width(), plain.network.model.input_width() + 1);
}

TEST(Neural, RawTargetTrainingIsAvailable) {
  auto rows = toy_rows(60, 3);
  TrainConfig c;
  c.standardize_targets = false;
  auto r = train_static(rows, c, false, 1);
  EXPECT_EQ(r.network.model.output_offset, 0.0);
  EXPECT_EQ(r.network.model.output_scale, 1.0);
  EXPECT_EQ(r.history.size(), 51u);
}

TEST(Neural, ArtifactRoundTrip) {
  auto rows = toy_rows(40, 4);
  TrainConfig c;
  c.epochs = 3;
  auto r = train_static(rows, c, true, 2);
  auto text = to_json(r.network).dump();
  auto back = static_network_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(predict(back, rows), predict(r.network, rows));
  auto j = nlohmann::json::parse(text);
  j["format"] = "biotwin-lstm";
  EXPECT_ERROR_KIND(static_network_from_json(j), ErrorKind::IncompatibleArtifact);
  j = nlohmann::json::parse(text);
  j["version"] = 99;
  EXPECT_ERROR_KIND(static_network_from_json(j), ErrorKind::IncompatibleArtifact);
}

TEST(Neural, InvalidTrainingConfig) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_ERROR_KIND(train_mlp(Matrix::Zero(2, 2), std::vector<double>{1, 2}, c, 0), ErrorKind::InvalidArgument);
  EXPECT_ERROR_KIND(train_static(std::vector<datakit::StaticRow>{}, TrainConfig{}, false, 0), ErrorKind::EmptyInput);
}
