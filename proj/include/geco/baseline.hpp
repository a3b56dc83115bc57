#pragma once

// Time-conditioned rectified-flow baseline. Convention: data at gamma = 1,
// noise at gamma = 0, x_gamma = gamma a + (1 - gamma) eps, target a - eps.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "geco/errors.hpp"
#include "geco/field.hpp"
#include "geco/net.hpp"
#include "geco/rng.hpp"

namespace geco {

/// v(x, gamma, s); the network input is concat(x, s, gamma).
inline Vector eval_time_field(const FieldParams& params, const Vector& x, double gamma,
                              const Vector& s) {
  check_field_dims(params, x.size(), s.size(), 1);
  Vector in(x.size() + s.size() + 1);
  in << x, s, gamma;
  return evaluate(params, in);
}

namespace detail {

inline std::pair<Matrix, Matrix> rf_regression_problem(std::span<const TrainingSample> batch,
                                                       std::span<const NoiseDraw> draws) {
  check_batch(batch);
  if (draws.size() != batch.size()) throw DimensionError("one noise draw per sample required");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dx = batch.front().chunk.size();
  const auto ds = batch.front().condition.size();
  Matrix inputs(n, dx + ds + 1);
  Matrix targets(n, dx);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TrainingSample& smp = batch[static_cast<std::size_t>(i)];
    const NoiseDraw& d = draws[static_cast<std::size_t>(i)];
    inputs.row(i).head(dx) = interpolate(smp.chunk, d.noise, d.gamma).transpose();
    inputs.row(i).segment(dx, ds) = smp.condition.transpose();
    inputs(i, dx + ds) = d.gamma;
    targets.row(i) = (smp.chunk - d.noise).transpose();
  }
  return {std::move(inputs), std::move(targets)};
}

}  // namespace detail

inline LossAndGrads rf_loss_and_grads(const FieldParams& params,
                                      std::span<const TrainingSample> batch,
                                      std::span<const NoiseDraw> draws) {
  auto [inputs, targets] = detail::rf_regression_problem(batch, draws);
  check_field_dims(params, batch.front().chunk.size(), batch.front().condition.size(), 1);
  return regression_loss_and_grads(params, inputs, targets);
}

inline LossAndGrads rf_loss_and_grads(const FieldParams& params,
                                      std::span<const TrainingSample> batch, Rng& rng,
                                      double gamma_power = 1.0) {
  detail::check_batch(batch);
  const auto draws = draw_noise(batch, rng, gamma_power);
  return rf_loss_and_grads(params, batch, draws);
}

inline double rf_loss(const FieldParams& params, std::span<const TrainingSample> batch,
                      std::span<const NoiseDraw> draws) {
  auto [inputs, targets] = detail::rf_regression_problem(batch, draws);
  check_field_dims(params, batch.front().chunk.size(), batch.front().condition.size(), 1);
  return regression_loss(params, inputs, targets);
}

struct FlowSample {
  Vector chunk;
  int nfe = 0;
};

/// Fixed-step Euler from gamma = 0 to 1: x += (1/N) v(x, k/N).
template <class Velocity>
FlowSample euler_integrate(Velocity&& velocity, Vector x, int n_steps) {
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  const double dt = 1.0 / n_steps;
  FlowSample out;
  for (int k = 0; k < n_steps; ++k) {
    const double gamma = static_cast<double>(k) / n_steps;
    x += dt * velocity(x, gamma);
    out.nfe += 1;
    if (!x.allFinite()) throw NumericError("non-finite state during Euler integration");
  }
  out.chunk = std::move(x);
  return out;
}

inline FlowSample rf_sample(const FieldParams& params, const Vector& condition, int n_steps,
                            Rng& rng) {
  const auto chunk_dim = static_cast<Eigen::Index>(params.spec.output_dim);
  check_field_dims(params, chunk_dim, condition.size(), 1);
  return euler_integrate(
      [&](const Vector& x, double gamma) { return eval_time_field(params, x, gamma, condition); },
      rng.normal_vector(chunk_dim), n_steps);
}

/// Exact velocity transporting any point to a one-point data distribution.
inline Vector analytic_point_field(const Vector& x, double gamma, const Vector& target) {
  if (x.size() != target.size()) throw DimensionError("analytic_point_field: length mismatch");
  if (!(gamma < 1.0)) throw ConfigError("analytic point field has a pole at gamma = 1");
  return (target - x) / (1.0 - gamma);
}

/// Single-draw flow-matching loss at the pure-noise end (x = eps, time 0):
/// ||v(eps, 0, s) - (generated - eps)||^2.
inline double fm_loss_proxy(const FieldParams& params, const Vector& condition,
                            const Vector& generated, const Vector& noise) {
  if (generated.size() != noise.size()) throw DimensionError("fm_loss_proxy: length mismatch");
  const Vector v = eval_time_field(params, noise, 0.0, condition);
  const double loss = (v - (generated - noise)).squaredNorm();
  if (!std::isfinite(loss)) throw NumericError("non-finite FM-loss proxy");
  return loss;
}

inline double fm_loss_proxy(const FieldParams& params, const Vector& condition,
                            const Vector& generated, Rng& rng) {
  return fm_loss_proxy(params, condition, generated, rng.normal_vector(generated.size()));
}

}  // namespace geco
