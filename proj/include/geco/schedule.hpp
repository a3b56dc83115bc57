#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "geco/errors.hpp"

namespace geco {

/// Truncated linear decay of the restoring-field scale: flat at `scale`
/// up to `onset`, then linear down to zero at gamma = 1.
struct DecaySchedule {
  double scale = 4.0;
  double onset = 0.1;

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw ConfigError("decay scale must be positive, got " + std::to_string(scale));
    if (!(onset >= 0.0 && onset < 1.0))
      throw ConfigError("decay onset must lie in [0, 1), got " + std::to_string(onset));
  }

  /// Constant value of c(gamma) / (1 - gamma) above the onset.
  double tail_slope() const { return scale / (1.0 - onset); }
};

inline double c_of_gamma(double gamma, const DecaySchedule& sched) {
  if (!(gamma >= 0.0 && gamma <= 1.0))
    throw ConfigError("gamma must lie in [0, 1], got " + std::to_string(gamma));
  if (gamma <= sched.onset) return sched.scale;
  return sched.scale * (1.0 - gamma) / (1.0 - sched.onset);
}

struct StepRange {
  int first = 1;  // inclusive, 1-based
  int last = 1;   // inclusive
  double eta = 0.0;
};

/// Per-step inference step sizes. Steps past the last range reuse its eta.
struct StepSizeTable {
  std::vector<StepRange> ranges;

  /// 0.1 at step 1, 0.05 for 2-4, 0.02 for 5-16, 0.01 for 17-30.
  static StepSizeTable standard() {
    return {{{1, 1, 0.1}, {2, 4, 0.05}, {5, 16, 0.02}, {17, 30, 0.01}}};
  }

  static StepSizeTable constant(double eta, int steps = 1) { return {{{1, steps, eta}}}; }

  void validate() const {
    if (ranges.empty()) throw ConfigError("step-size table is empty");
    int expected = 1;
    for (const StepRange& r : ranges) {
      if (r.first != expected || r.last < r.first)
        throw ConfigError("step-size ranges must be contiguous from step 1");
      if (!(r.eta > 0.0) || !std::isfinite(r.eta))
        throw ConfigError("step sizes must be positive");
      expected = r.last + 1;
    }
  }
};

inline double eta_of_step(int k, const StepSizeTable& table) {
  if (table.ranges.empty()) throw ConfigError("step-size table is empty");
  if (k < 1) throw ConfigError("step index is 1-based, got " + std::to_string(k));
  for (const StepRange& r : table.ranges)
    if (k >= r.first && k <= r.last) return r.eta;
  return table.ranges.back().eta;
}

}  // namespace geco
