#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "geco/errors.hpp"
#include "geco/rng.hpp"

namespace geco {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint32_t { tanh = 0, softplus = 1 };

inline const char* to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "softplus";
}

struct NetworkSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_dims{256, 256, 256};
  std::size_t output_dim = 1;
  Activation activation = Activation::tanh;

  std::size_t layer_count() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden_dims[l - 1]; }
  std::size_t layer_out(std::size_t l) const {
    return l == hidden_dims.size() ? output_dim : hidden_dims[l];
  }

  void validate() const {
    if (input_dim == 0 || output_dim == 0)
      throw ConfigError("network input_dim and output_dim must be >= 1");
    for (std::size_t h : hidden_dims)
      if (h == 0) throw ConfigError("network hidden dims must be >= 1");
    if (activation != Activation::tanh && activation != Activation::softplus)
      throw ConfigError("unknown activation");
  }

  bool operator==(const NetworkSpec&) const = default;
};

/// Weights and biases of a dense network. Also used as the gradient type.
/// weights[l] is (out x in), row-major.
struct FieldParams {
  NetworkSpec spec;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static FieldParams zeros(const NetworkSpec& spec) {
    spec.validate();
    FieldParams p;
    p.spec = spec;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      const auto out = static_cast<Eigen::Index>(spec.layer_out(l));
      const auto in = static_cast<Eigen::Index>(spec.layer_in(l));
      p.weights.push_back(Matrix::Zero(out, in));
      p.biases.push_back(Vector::Zero(out));
    }
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  bool same_shape(const FieldParams& other) const {
    if (spec != other.spec || weights.size() != other.weights.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != other.weights[l].rows() ||
          weights[l].cols() != other.weights[l].cols() ||
          biases[l].size() != other.biases[l].size())
        return false;
    }
    return true;
  }

  /// Contiguous storage blocks in canonical order (W0, b0, W1, b1, ...).
  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
      out.emplace_back(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
    }
    return out;
  }
  std::vector<std::span<const double>> blocks() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.emplace_back(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
      out.emplace_back(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
    }
    return out;
  }

  bool all_finite() const {
    for (auto block : blocks())
      for (double v : block)
        if (!std::isfinite(v)) return false;
    return true;
  }

  FieldParams& operator+=(const FieldParams& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += other.weights[l];
      biases[l] += other.biases[l];
    }
    return *this;
  }

  FieldParams& operator*=(double s) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] *= s;
      biases[l] *= s;
    }
    return *this;
  }

  bool operator==(const FieldParams& other) const {
    if (!same_shape(other)) return false;
    for (std::size_t l = 0; l < weights.size(); ++l)
      if (weights[l] != other.weights[l] || biases[l] != other.biases[l]) return false;
    return true;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
inline FieldParams init_network(const NetworkSpec& spec, std::uint64_t seed) {
  FieldParams p = FieldParams::zeros(spec);
  Rng rng(derive_seed(seed, Stream::init));
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.layer_in(l)));
    auto& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-scale, scale);
  }
  return p;
}

/// Everything backward needs. Rows are samples.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // input to layer l, (batch x in_l)
  std::vector<Matrix> preacts;       // pre-activation of hidden layer l
  NetworkSpec spec;
};

namespace detail {

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_params(const FieldParams& params) {
  if (params.weights.size() != params.spec.layer_count() ||
      params.biases.size() != params.spec.layer_count())
    throw DimensionError("parameter layer count does not match network spec");
}

}  // namespace detail

/// Batched forward pass. `inputs` is (batch x input_dim).
inline Matrix forward_batch(const FieldParams& params, const Matrix& inputs,
                            ForwardCache* cache = nullptr) {
  detail::check_params(params);
  const NetworkSpec& spec = params.spec;
  if (static_cast<std::size_t>(inputs.cols()) != spec.input_dim)
    throw DimensionError("input width " + std::to_string(inputs.cols()) +
                         " != network input_dim " + std::to_string(spec.input_dim));
  if (!inputs.allFinite()) throw NumericError("non-finite network input");

  if (cache) {
    cache->spec = spec;
    cache->layer_inputs.clear();
    cache->preacts.clear();
  }
  Matrix h = inputs;
  const std::size_t n_layers = spec.layer_count();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix z = h * params.weights[l].transpose();
    z.rowwise() += params.biases[l].transpose();
    if (cache) cache->layer_inputs.push_back(std::move(h));
    if (l + 1 == n_layers) return z;
    if (spec.activation == Activation::tanh) {
      h = z.array().tanh().matrix();
    } else {
      h = z.unaryExpr([](double v) { return detail::softplus(v); });
    }
    if (cache) cache->preacts.push_back(std::move(z));
  }
  return h;  // unreachable: layer_count() >= 1
}

struct BatchGradients {
  FieldParams params;
  Matrix inputs;
};

/// Exact reverse-mode gradients of sum_ij output_ij * output_grad_ij.
inline BatchGradients backward_batch(const FieldParams& params, const ForwardCache& cache,
                                     const Matrix& output_grad) {
  detail::check_params(params);
  const NetworkSpec& spec = params.spec;
  const std::size_t n_layers = spec.layer_count();
  if (cache.spec != spec || cache.layer_inputs.size() != n_layers ||
      cache.preacts.size() + 1 != n_layers)
    throw DimensionError("forward cache does not match network parameters");
  const Eigen::Index batch = cache.layer_inputs.front().rows();
  if (output_grad.rows() != batch ||
      static_cast<std::size_t>(output_grad.cols()) != spec.output_dim)
    throw DimensionError("output gradient shape does not match forward cache");

  BatchGradients out{FieldParams::zeros(spec), Matrix()};
  Matrix g = output_grad;
  for (std::size_t l = n_layers; l-- > 0;) {
    out.params.weights[l].noalias() = g.transpose() * cache.layer_inputs[l];
    out.params.biases[l] = g.colwise().sum().transpose();
    Matrix upstream = g * params.weights[l];
    if (l == 0) {
      out.inputs = std::move(upstream);
      break;
    }
    // Derivative of the activation that produced layer_inputs[l].
    if (spec.activation == Activation::tanh) {
      const Matrix& act = cache.layer_inputs[l];
      g = (upstream.array() * (1.0 - act.array().square())).matrix();
    } else {
      const Matrix& z = cache.preacts[l - 1];
      g = (upstream.array() * z.unaryExpr([](double v) { return detail::sigmoid(v); }).array())
              .matrix();
    }
  }
  return out;
}

/// Single-sample forward.
inline std::pair<Vector, ForwardCache> forward(const FieldParams& params, const Vector& input) {
  ForwardCache cache;
  Matrix row = input.transpose();
  Matrix out = forward_batch(params, row, &cache);
  return {out.row(0).transpose(), std::move(cache)};
}

/// Forward without a cache, for inference.
inline Vector evaluate(const FieldParams& params, const Vector& input) {
  Matrix row = input.transpose();
  return forward_batch(params, row).row(0).transpose();
}

/// Single-sample backward: gradients of <output, output_grad>.
inline std::pair<FieldParams, Vector> backward(const FieldParams& params, const ForwardCache& cache,
                                               const Vector& output_grad) {
  Matrix row = output_grad.transpose();
  BatchGradients g = backward_batch(params, cache, row);
  return {std::move(g.params), g.inputs.row(0).transpose()};
}

/// Central differences (L(p+h) - L(p-h)) / 2h for every parameter.
/// `loss` maps const FieldParams& -> double.
template <class Loss>
FieldParams finite_difference_grad(const FieldParams& params, Loss&& loss, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  FieldParams probe = params;
  FieldParams grads = FieldParams::zeros(params.spec);
  auto probe_blocks = probe.blocks();
  auto grad_blocks = grads.blocks();
  for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
    for (std::size_t i = 0; i < probe_blocks[b].size(); ++i) {
      double& slot = probe_blocks[b][i];
      const double saved = slot;
      slot = saved + h;
      const double plus = loss(std::as_const(probe));
      slot = saved - h;
      const double minus = loss(std::as_const(probe));
      slot = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus))
        throw NumericError("non-finite loss during finite differencing");
      grad_blocks[b][i] = (plus - minus) / (2.0 * h);
    }
  }
  return grads;
}

/// Largest per-entry |a - b| / max(|a|, |b|, floor) over two gradient sets.
inline double max_relative_error(const FieldParams& a, const FieldParams& b, double floor = 1e-7) {
  if (!a.same_shape(b)) throw DimensionError("gradient shapes differ");
  double worst = 0.0;
  auto ab = a.blocks();
  auto bb = b.blocks();
  for (std::size_t k = 0; k < ab.size(); ++k)
    for (std::size_t i = 0; i < ab[k].size(); ++i) {
      const double denom = std::max({std::abs(ab[k][i]), std::abs(bb[k][i]), floor});
      worst = std::max(worst, std::abs(ab[k][i] - bb[k][i]) / denom);
    }
  return worst;
}

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  FieldParams first_moment;
  FieldParams second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  static OptimizerState for_params(const FieldParams& params, AdamHyper hyper = {}) {
    return {FieldParams::zeros(params.spec), FieldParams::zeros(params.spec), 0, hyper};
  }
};

/// Thrown when an update would consume non-finite gradients. Params and
/// optimizer state are left untouched.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(FieldParams& params, const FieldParams& grads, OptimizerState& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment))
    throw DimensionError("adam: parameter, gradient and moment shapes differ");
  if (!grads.all_finite()) throw DivergenceError("adam: non-finite gradient, step rejected");

  const AdamHyper& hp = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double corr1 = 1.0 - std::pow(hp.beta1, t);
  const double corr2 = 1.0 - std::pow(hp.beta2, t);

  auto p = params.blocks();
  auto g = grads.blocks();
  auto m = state.first_moment.blocks();
  auto v = state.second_moment.blocks();
  for (std::size_t b = 0; b < p.size(); ++b) {
    for (std::size_t i = 0; i < p[b].size(); ++i) {
      const double gi = g[b][i];
      m[b][i] = hp.beta1 * m[b][i] + (1.0 - hp.beta1) * gi;
      v[b][i] = hp.beta2 * v[b][i] + (1.0 - hp.beta2) * gi * gi;
      const double m_hat = m[b][i] / corr1;
      const double v_hat = v[b][i] / corr2;
      p[b][i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
    }
  }
}

}  // namespace geco
