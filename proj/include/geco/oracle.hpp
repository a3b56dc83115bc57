#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "geco/errors.hpp"
#include "geco/net.hpp"
#include "geco/schedule.hpp"

namespace geco {

/// One point-mass expert mode of the conditional action distribution.
struct Mode {
  double weight = 1.0;
  Vector mean;
};

struct QuadratureConfig {
  int nodes = 512;

  void validate() const {
    if (nodes < 200) throw ConfigError("oracle quadrature needs at least 200 gamma nodes");
  }
};

/// Bayes-optimal GeCO field for a point-mass mixture: the posterior mean of
/// the regression target given x,
///
///   f*(x) = sum_{j,n} w(n, j | x) (x - mu_j) c(gamma_n) / (1 - gamma_n),
///   w(n, j | x) ~ pi_j N(x; gamma_n mu_j, (1 - gamma_n)^2 I),
///
/// integrated with the midpoint rule on (0, 1). The endpoint gamma = 1 is
/// never a node. Returns nullopt when the posterior mass is not representable.
inline std::optional<Vector> oracle_field(std::span<const Mode> modes, const Vector& x,
                                          const DecaySchedule& sched,
                                          const QuadratureConfig& quad = {}) {
  quad.validate();
  sched.validate();
  if (modes.empty()) throw ConfigError("oracle_field needs at least one mode");
  for (const Mode& m : modes) {
    if (m.mean.size() != x.size()) throw DimensionError("oracle mode / point length mismatch");
    if (!(m.weight > 0.0)) throw ConfigError("oracle mode weights must be positive");
  }
  if (!x.allFinite()) return std::nullopt;

  const double dim = static_cast<double>(x.size());
  const int n_nodes = quad.nodes;
  const std::size_t n_terms = modes.size() * static_cast<std::size_t>(n_nodes);
  std::vector<double> log_w(n_terms);
  std::vector<double> slope(n_terms);
  double max_log = -std::numeric_limits<double>::infinity();

  std::size_t t = 0;
  for (const Mode& m : modes) {
    const double log_pi = std::log(m.weight);
    for (int n = 0; n < n_nodes; ++n, ++t) {
      const double gamma = (n + 0.5) / n_nodes;
      const double sigma = 1.0 - gamma;
      const double sq = (x - gamma * m.mean).squaredNorm();
      log_w[t] = log_pi - sq / (2.0 * sigma * sigma) - dim * std::log(sigma);
      slope[t] = c_of_gamma(gamma, sched) / sigma;
      max_log = std::max(max_log, log_w[t]);
    }
  }
  if (!std::isfinite(max_log)) return std::nullopt;

  double total = 0.0;
  Vector accum = Vector::Zero(x.size());
  t = 0;
  for (const Mode& m : modes) {
    double mode_slope = 0.0;
    for (int n = 0; n < n_nodes; ++n, ++t) {
      const double w = std::exp(log_w[t] - max_log);
      total += w;
      mode_slope += w * slope[t];
    }
    accum += mode_slope * (x - m.mean);
  }
  if (!(total > 0.0) || !std::isfinite(total)) return std::nullopt;
  return accum / total;
}

}  // namespace geco
