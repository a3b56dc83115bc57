#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "geco/errors.hpp"
#include "geco/net.hpp"
#include "geco/rng.hpp"
#include "geco/schedule.hpp"

namespace geco {

/// One (condition, expert chunk) pair. `mode_id` is bookkeeping for oracles
/// and is never shown to a model.
struct TrainingSample {
  Vector condition;
  Vector chunk;
  int mode_id = 0;
};

/// Per-sample draw of the interpolation position and the Gaussian endpoint.
struct NoiseDraw {
  double gamma = 0.0;
  Vector noise;
};

inline Vector interpolate(const Vector& a, const Vector& noise, double gamma) {
  if (a.size() != noise.size()) throw DimensionError("interpolate: length mismatch");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("interpolate: gamma outside [0, 1]");
  return gamma * a + (1.0 - gamma) * noise;
}

/// Restoring direction (noise - a) * c(gamma); zero at gamma = 1.
inline Vector target_field(const Vector& a, const Vector& noise, double gamma,
                           const DecaySchedule& sched) {
  if (a.size() != noise.size()) throw DimensionError("target_field: length mismatch");
  return (noise - a) * c_of_gamma(gamma, sched);
}

inline void check_field_dims(const FieldParams& params, Eigen::Index chunk_dim,
                             Eigen::Index cond_dim, Eigen::Index extra_inputs = 0) {
  const auto want_in = static_cast<std::size_t>(chunk_dim + cond_dim + extra_inputs);
  if (params.spec.input_dim != want_in || params.spec.output_dim != static_cast<std::size_t>(chunk_dim))
    throw DimensionError("field network expects input " + std::to_string(params.spec.input_dim) +
                         " / output " + std::to_string(params.spec.output_dim) + ", got chunk " +
                         std::to_string(chunk_dim) + " + condition " + std::to_string(cond_dim) +
                         (extra_inputs ? " + time" : ""));
}

/// f(x, s): the time-unconditional field. The network sees concat(x, s) only.
inline Vector eval_field(const FieldParams& params, const Vector& x, const Vector& s) {
  check_field_dims(params, x.size(), s.size());
  Vector in(x.size() + s.size());
  in << x, s;
  return evaluate(params, in);
}

/// Stateless callable view of eval_field bound to one condition.
class BoundField {
 public:
  BoundField(const FieldParams& params, Vector condition)
      : params_(&params), condition_(std::move(condition)) {}
  Vector operator()(const Vector& x) const { return eval_field(*params_, x, condition_); }

 private:
  const FieldParams* params_;
  Vector condition_;
};

struct LossAndGrads {
  double loss = 0.0;
  FieldParams grads;
};

/// Mean over rows of ||net(inputs) - targets||^2 and its parameter gradient.
inline LossAndGrads regression_loss_and_grads(const FieldParams& params, const Matrix& inputs,
                                              const Matrix& targets) {
  ForwardCache cache;
  const Matrix out = forward_batch(params, inputs, &cache);
  const Matrix residual = out - targets;
  const double batch = static_cast<double>(inputs.rows());
  const double loss = residual.squaredNorm() / batch;
  if (!std::isfinite(loss)) throw NumericError("non-finite regression loss");
  BatchGradients g = backward_batch(params, cache, (2.0 / batch) * residual);
  return {loss, std::move(g.params)};
}

inline double regression_loss(const FieldParams& params, const Matrix& inputs,
                              const Matrix& targets) {
  return (forward_batch(params, inputs) - targets).squaredNorm() /
         static_cast<double>(inputs.rows());
}

namespace detail {

inline void check_batch(std::span<const TrainingSample> batch) {
  if (batch.empty()) throw ConfigError("empty training batch");
  const auto chunk_dim = batch.front().chunk.size();
  const auto cond_dim = batch.front().condition.size();
  for (const TrainingSample& s : batch)
    if (s.chunk.size() != chunk_dim || s.condition.size() != cond_dim)
      throw DimensionError("training batch mixes sample dimensions");
}

/// Network inputs concat(x_gamma, s) and targets g* for fixed draws.
inline std::pair<Matrix, Matrix> geco_regression_problem(std::span<const TrainingSample> batch,
                                                         std::span<const NoiseDraw> draws,
                                                         const DecaySchedule& sched) {
  check_batch(batch);
  if (draws.size() != batch.size()) throw DimensionError("one noise draw per sample required");
  const auto n = static_cast<Eigen::Index>(batch.size());
  const auto dx = batch.front().chunk.size();
  const auto ds = batch.front().condition.size();
  Matrix inputs(n, dx + ds);
  Matrix targets(n, dx);
  for (Eigen::Index i = 0; i < n; ++i) {
    const TrainingSample& smp = batch[static_cast<std::size_t>(i)];
    const NoiseDraw& d = draws[static_cast<std::size_t>(i)];
    inputs.row(i).head(dx) = interpolate(smp.chunk, d.noise, d.gamma).transpose();
    inputs.row(i).tail(ds) = smp.condition.transpose();
    targets.row(i) = target_field(smp.chunk, d.noise, d.gamma, sched).transpose();
  }
  return {std::move(inputs), std::move(targets)};
}

}  // namespace detail

/// noise ~ N(0, I) for each sample, in batch order. gamma = 1 - (1 - u)^power
/// with u ~ U(0,1); power 1 is plain U(0,1), larger powers favour the data end.
inline std::vector<NoiseDraw> draw_noise(std::span<const TrainingSample> batch, Rng& rng,
                                         double gamma_power = 1.0) {
  if (!(gamma_power > 0.0) || !std::isfinite(gamma_power))
    throw ConfigError("gamma_power must be finite and > 0");
  std::vector<NoiseDraw> draws;
  draws.reserve(batch.size());
  for (const TrainingSample& s : batch) {
    NoiseDraw d;
    const double u = rng.uniform();
    d.gamma = gamma_power == 1.0 ? u : 1.0 - std::pow(1.0 - u, gamma_power);
    d.noise = rng.normal_vector(s.chunk.size());
    draws.push_back(std::move(d));
  }
  return draws;
}

/// GeCO regression loss at fixed draws. gamma shapes the input and the
/// target scale only; it never reaches the network.
inline LossAndGrads geco_loss_and_grads(const FieldParams& params,
                                        std::span<const TrainingSample> batch,
                                        std::span<const NoiseDraw> draws,
                                        const DecaySchedule& sched) {
  auto [inputs, targets] = detail::geco_regression_problem(batch, draws, sched);
  check_field_dims(params, batch.front().chunk.size(), batch.front().condition.size());
  return regression_loss_and_grads(params, inputs, targets);
}

inline LossAndGrads geco_loss_and_grads(const FieldParams& params,
                                        std::span<const TrainingSample> batch,
                                        const DecaySchedule& sched, Rng& rng,
                                        double gamma_power = 1.0) {
  detail::check_batch(batch);
  const auto draws = draw_noise(batch, rng, gamma_power);
  return geco_loss_and_grads(params, batch, draws, sched);
}

inline double geco_loss(const FieldParams& params, std::span<const TrainingSample> batch,
                        std::span<const NoiseDraw> draws, const DecaySchedule& sched) {
  auto [inputs, targets] = detail::geco_regression_problem(batch, draws, sched);
  check_field_dims(params, batch.front().chunk.size(), batch.front().condition.size());
  return regression_loss(params, inputs, targets);
}

}  // namespace geco
