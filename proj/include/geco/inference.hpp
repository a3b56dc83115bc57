#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "geco/errors.hpp"
#include "geco/field.hpp"
#include "geco/net.hpp"
#include "geco/parallel.hpp"
#include "geco/rng.hpp"
#include "geco/schedule.hpp"

namespace geco {

enum class StopReason { converged, budget, non_finite };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::converged: return "converged";
    case StopReason::budget: return "budget";
    case StopReason::non_finite: return "non_finite";
  }
  return "?";
}

struct InferConfig {
  int k_max = 30;
  double tolerance = 0.4;
  StepSizeTable steps = StepSizeTable::standard();

  void validate() const {
    if (k_max < 1) throw ConfigError("k_max must be >= 1");
    if (!(tolerance >= 0.0)) throw ConfigError("stopping tolerance must be >= 0");
    steps.validate();
  }
};

/// Record of one planning call. residuals[k] = ||f(a_k, s)|| for every
/// evaluated iterate, so nfe == residuals.size().
struct InferenceTrace {
  std::vector<double> residuals;
  int nfe = 0;
  int updates = 0;
  StopReason stop = StopReason::budget;
  Vector chunk;
};

/// Adaptive early-exit descent on a stationary field:
///
///   for k = 0 .. K-1:
///     v = f(a_k); if ||v|| < tol: stop
///     a_{k+1} = a_k - eta_{k+1} v
///
/// The norm check precedes the update. On a non-finite field value or
/// iterate, the last finite iterate is returned with stop = non_finite.
template <class Field>
InferenceTrace optimize_chunk(Field&& field, Vector init, const InferConfig& cfg) {
  cfg.validate();
  InferenceTrace trace;
  trace.residuals.reserve(static_cast<std::size_t>(cfg.k_max));
  Vector a = std::move(init);
  trace.stop = StopReason::budget;
  for (int k = 0; k < cfg.k_max; ++k) {
    const Vector v = field(a);
    trace.nfe += 1;
    const double r = v.norm();
    trace.residuals.push_back(r);
    if (!std::isfinite(r)) {
      trace.stop = StopReason::non_finite;
      break;
    }
    if (r < cfg.tolerance) {
      trace.stop = StopReason::converged;
      break;
    }
    Vector next = a - eta_of_step(k + 1, cfg.steps) * v;
    if (!next.allFinite()) {
      trace.stop = StopReason::non_finite;
      break;
    }
    a = std::move(next);
    trace.updates += 1;
  }
  trace.chunk = std::move(a);
  return trace;
}

/// One planning call: a_0 ~ N(0, I), then optimize_chunk on f(., s).
inline InferenceTrace geco_infer(const FieldParams& params, const Vector& condition,
                                 const InferConfig& cfg, Rng& rng) {
  const auto chunk_dim = static_cast<Eigen::Index>(params.spec.output_dim);
  check_field_dims(params, chunk_dim, condition.size());
  Vector init = rng.normal_vector(chunk_dim);
  return optimize_chunk(BoundField(params, condition), std::move(init), cfg);
}

/// Independent geco_infer per condition. Item i draws from the stream keyed
/// by keys[i] (defaults to i), so reordering inputs with matching keys
/// reorders outputs identically.
inline std::vector<InferenceTrace> batch_infer(const FieldParams& params,
                                               const std::vector<Vector>& conditions,
                                               const InferConfig& cfg, std::uint64_t seed,
                                               std::vector<std::uint64_t> keys = {},
                                               std::size_t workers = 1) {
  if (keys.empty()) {
    keys.resize(conditions.size());
    std::iota(keys.begin(), keys.end(), std::uint64_t{0});
  }
  if (keys.size() != conditions.size()) throw DimensionError("batch_infer: one key per condition");
  std::vector<InferenceTrace> out(conditions.size());
  parallel_for(conditions.size(), workers, [&](std::size_t i) {
    try {
      Rng rng(derive_seed(seed, Stream::inference, keys[i]));
      out[i] = geco_infer(params, conditions[i], cfg, rng);
    } catch (const std::exception& e) {
      throw std::runtime_error("batch_infer item " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace geco
