#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "geco/field.hpp"
#include "geco/oracle.hpp"

using namespace geco;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

NetworkSpec spec_for(Eigen::Index chunk, Eigen::Index cond, std::vector<std::size_t> hidden) {
  NetworkSpec s;
  s.input_dim = static_cast<std::size_t>(chunk + cond);
  s.output_dim = static_cast<std::size_t>(chunk);
  s.hidden_dims = std::move(hidden);
  return s;
}

// Posterior-mean field by importance sampling: gamma ~ U(0,1), mode ~ weights,
// each draw weighted by the Gaussian likelihood of x.
Vector monte_carlo_field(const std::vector<Mode>& modes, const Vector& x,
                         const DecaySchedule& sched, int samples, Rng& rng) {
  double total_weight = 0.0;
  for (const Mode& m : modes) total_weight += m.weight;
  std::vector<double> log_w(static_cast<std::size_t>(samples));
  std::vector<double> slope(static_cast<std::size_t>(samples));
  std::vector<int> pick(static_cast<std::size_t>(samples));
  double max_log = -INFINITY;
  const double dim = static_cast<double>(x.size());
  for (int i = 0; i < samples; ++i) {
    const double gamma = rng.uniform_open();
    double u = rng.uniform() * total_weight;
    int j = 0;
    while (j + 1 < static_cast<int>(modes.size()) && u >= modes[static_cast<std::size_t>(j)].weight)
      u -= modes[static_cast<std::size_t>(j++)].weight;
    const double sigma = 1.0 - gamma;
    const auto& mu = modes[static_cast<std::size_t>(j)].mean;
    const auto k = static_cast<std::size_t>(i);
    log_w[k] = -(x - gamma * mu).squaredNorm() / (2 * sigma * sigma) - dim * std::log(sigma);
    slope[k] = c_of_gamma(gamma, sched) / sigma;
    pick[k] = j;
    max_log = std::max(max_log, log_w[k]);
  }
  Vector acc = Vector::Zero(x.size());
  double norm = 0.0;
  for (std::size_t k = 0; k < log_w.size(); ++k) {
    const double w = std::exp(log_w[k] - max_log);
    norm += w;
    acc += w * slope[k] * (x - modes[static_cast<std::size_t>(pick[k])].mean);
  }
  return acc / norm;
}

}  // namespace

TEST(Interpolate, Endpoints) {
  const Vector a = vec({1.0, -2.0}), e = vec({0.3, 0.7});
  EXPECT_EQ(interpolate(a, e, 0.0), e);
  EXPECT_EQ(interpolate(a, e, 1.0), a);
}

TEST(Interpolate, Midpoint) {
  EXPECT_TRUE(interpolate(vec({1, 0}), vec({0, 1}), 0.5).isApprox(vec({0.5, 0.5})));
}

TEST(Interpolate, LengthMismatch) {
  EXPECT_THROW(interpolate(vec({1, 0}), vec({0}), 0.5), DimensionError);
  EXPECT_THROW(target_field(vec({1, 0}), vec({0}), 0.5, {}), DimensionError);
}

TEST(TargetField, VanishesAtDataEnd) {
  Rng rng(4);
  for (int i = 0; i < 50; ++i)
    EXPECT_TRUE(target_field(rng.normal_vector(6), rng.normal_vector(6), 1.0, {}).isZero(0.0));
}

TEST(TargetField, PlateauAndDecayExamples) {
  EXPECT_TRUE(target_field(vec({1, 0}), vec({0, 0}), 0.05, {}).isApprox(vec({-4, 0})));
  EXPECT_TRUE(target_field(vec({1, 0}), vec({0, 0}), 0.55, {}).isApprox(vec({-2, 0}), 1e-14));
}

TEST(EvalField, ZeroParamsGiveZeroField) {
  const auto p = FieldParams::zeros(spec_for(3, 2, {8}));
  EXPECT_TRUE(eval_field(p, vec({1, 2, 3}), vec({4, 5})).isZero(0.0));
}

TEST(EvalField, PureAndTimeFree) {
  const auto p = init_network(spec_for(3, 2, {8, 8}), 1);
  EXPECT_EQ(eval_field(p, vec({1, 2, 3}), vec({4, 5})), eval_field(p, vec({1, 2, 3}), vec({4, 5})));
  // The input slot count is exactly chunk + condition: no room for gamma.
  const auto with_time = init_network(spec_for(4, 2, {8}), 1);
  EXPECT_THROW(eval_field(with_time, vec({1, 2, 3}), vec({4, 5})), DimensionError);
}

TEST(GecoLoss, ZeroParamsHandEvaluated) {
  const auto p = FieldParams::zeros(spec_for(2, 1, {4}));
  const std::vector<TrainingSample> batch{{vec({0.0}), vec({1.0, 0.0}), 1}};
  const std::vector<NoiseDraw> draws{{0.5, vec({0.0, 0.0})}};
  const double c = 4.0 * 0.5 / 0.9;
  EXPECT_NEAR(geco_loss(p, batch, draws, {}), c * c, 1e-12);
  EXPECT_NEAR(c * c, 4.938, 1e-3);
}

TEST(GecoLoss, PerfectAffineFitHasZeroLoss) {
  // One sample, gamma=0: x = eps, target = (eps - a) * 4. An affine map
  // W x + b with W = 4 I and b = -4 a reproduces it; the condition is ignored.
  NetworkSpec s = spec_for(2, 1, {});
  auto p = FieldParams::zeros(s);
  const Vector a = vec({0.3, -0.6});
  p.weights[0].leftCols(2) = 4.0 * Matrix::Identity(2, 2);
  p.biases[0] = -4.0 * a;
  const std::vector<TrainingSample> batch{{vec({0.9}), a, 1}};
  const std::vector<NoiseDraw> draws{{0.0, vec({1.5, 0.2})}};
  EXPECT_NEAR(geco_loss(p, batch, draws, {}), 0.0, 1e-24);
}

TEST(GecoLoss, GradientsMatchFiniteDifferences) {
  const auto p = init_network(spec_for(3, 2, {6, 5}), 12);
  Rng rng(3);
  std::vector<TrainingSample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({rng.normal_vector(2), rng.normal_vector(3), 1});
  const auto draws = draw_noise(batch, rng);
  const DecaySchedule sched{4.0, 0.1};
  const auto analytic = geco_loss_and_grads(p, batch, draws, sched);
  const auto numeric = finite_difference_grad(
      p, [&](const FieldParams& q) { return geco_loss(q, batch, draws, sched); }, 1e-4);
  EXPECT_LT(max_relative_error(analytic.grads, numeric, 1e-6), 1e-4);
  EXPECT_NEAR(analytic.loss, geco_loss(p, batch, draws, sched), 1e-12);
}

TEST(GecoLoss, EmptyBatchAndMismatchRejected) {
  const auto p = init_network(spec_for(3, 2, {4}), 1);
  Rng rng(1);
  EXPECT_THROW(geco_loss_and_grads(p, std::vector<TrainingSample>{}, {}, rng), ConfigError);
  const std::vector<TrainingSample> wrong{{vec({1.0}), vec({1, 2, 3}), 1}};
  EXPECT_THROW(geco_loss_and_grads(p, wrong, {}, rng), DimensionError);
}

TEST(OracleField, ZeroAtSingleMode) {
  const Vector mu = vec({0.4, -0.2, 0.9});
  const std::vector<Mode> modes{{1.0, mu}};
  EXPECT_TRUE(oracle_field(modes, mu, {})->isZero(1e-12));
}

TEST(OracleField, SymmetricModesCancelAtOrigin) {
  const Vector mu = vec({0.5, 0.5});
  const std::vector<Mode> modes{{0.5, mu}, {0.5, -mu}};
  EXPECT_TRUE(oracle_field(modes, Vector::Zero(2), {})->isZero(1e-12));
}

TEST(OracleField, ConstantSlopeNearSingleMode) {
  Rng rng(17);
  const DecaySchedule sched{4.0, 0.1};
  for (int trial = 0; trial < 20; ++trial) {
    const Vector mu = rng.normal_vector(16) * 0.5;
    Vector dir = rng.normal_vector(16);
    dir.normalize();
    const Vector x = mu + rng.uniform(0.01, 0.2) * dir;
    const std::vector<Mode> modes{{1.0, mu}};
    const Vector f = *oracle_field(modes, x, sched);
    const Vector expect = sched.tail_slope() * (x - mu);
    EXPECT_LT((f - expect).norm(), 0.05 * expect.norm()) << trial;
  }
}

TEST(OracleField, MatchesMonteCarlo) {
  Rng rng(2718);
  const DecaySchedule sched{4.0, 0.8};
  std::vector<Mode> modes{{0.5, rng.normal_vector(4) * 0.6},
                          {0.3, rng.normal_vector(4) * 0.6},
                          {0.2, rng.normal_vector(4) * 0.6}};
  for (int trial = 0; trial < 10; ++trial) {
    const auto& mu = modes[static_cast<std::size_t>(trial % 3)].mean;
    const double gamma = rng.uniform(0.1, 0.9);
    const Vector x = gamma * mu + (1 - gamma) * rng.normal_vector(4);
    const Vector q = *oracle_field(modes, x, sched);
    const Vector mc = monte_carlo_field(modes, x, sched, 1000000, rng);
    EXPECT_LT((q - mc).norm(), 0.02 * q.norm()) << trial;
  }
}

TEST(OracleField, FarFieldUsesPlateauScale) {
  // Far from the data the posterior sits at gamma ~ 0, where c = scale.
  const std::vector<Mode> modes{{1.0, vec({0.0, 0.0})}};
  const Vector x = vec({30.0, -40.0});
  const Vector f = *oracle_field(modes, x, DecaySchedule{4.0, 0.1});
  EXPECT_TRUE(f.isApprox(4.0 * x, 1e-2));
}

TEST(OracleField, UndefinedAndInvalidInputs) {
  const std::vector<Mode> modes{{1.0, vec({0.0, 0.0})}};
  EXPECT_FALSE(oracle_field(modes, vec({NAN, 0.0}), {}).has_value());
  EXPECT_THROW(oracle_field(modes, vec({0.0, 0.0}), {}, QuadratureConfig{100}), ConfigError);
  EXPECT_THROW(oracle_field(std::vector<Mode>{}, vec({0.0, 0.0}), {}), ConfigError);
  EXPECT_THROW(oracle_field(modes, vec({0.0}), {}), DimensionError);
}
