#pragma once

// Synthetic conditional-control task: a 2-D point mass travels from the
// origin to a goal. Conditions carry the remaining displacement
// (goal - position) and the task displacement (goal - start); both are
// translation invariant and the second is constant within an episode.
//
// Expert chunks are `horizon` displacement steps. The expert cruises at
// |task| / horizon per step along the remaining displacement and stops once
// it arrives, so a chunk always sums to the remaining displacement. Mode 1
// is straight; higher modes bow sideways over the first exec_count steps
// (left, right, 2x left, ...) and rejoin the line before the next replan.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "geco/errors.hpp"
#include "geco/field.hpp"
#include "geco/inference.hpp"
#include "geco/net.hpp"
#include "geco/normalizer.hpp"
#include "geco/oracle.hpp"
#include "geco/rng.hpp"

namespace geco {

enum class Split { id, ood };

inline const char* to_string(Split s) { return s == Split::id ? "ID" : "OOD"; }

struct MixtureTaskSpec {
  int action_dim = 2;
  int horizon = 16;
  int modes = 2;
  double id_inner = 0.5;
  double id_outer = 1.0;
  double ood_inner = 1.5;
  double ood_outer = 2.0;
  double detour = 0.4;
  /// Steps executed per planning call. Bows are confined to this prefix so
  /// every mode leaves the same remaining displacement for the next call.
  int exec_count = 8;
  /// Conditions per goal in generated data: the start state plus
  /// progress_samples - 1 states at uniformly random progress along the task.
  int progress_samples = 4;

  Eigen::Index chunk_dim() const { return static_cast<Eigen::Index>(action_dim) * horizon; }
  static constexpr Eigen::Index condition_dim() { return 4; }

  void validate() const {
    if (action_dim != 2) throw ConfigError("the point-mass task is planar: action_dim must be 2");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (modes < 1) throw ConfigError("modes must be >= 1");
    if (exec_count < 1 || exec_count > horizon)
      throw ConfigError("exec_count must lie in [1, horizon]");
    if (!(id_inner >= 0.0 && id_inner <= id_outer))
      throw ConfigError("ID annulus radii must satisfy 0 <= inner <= outer");
    if (!(ood_inner <= ood_outer)) throw ConfigError("OOD annulus radii out of order");
    if (!(ood_inner > id_outer)) throw ConfigError("ID and OOD regions must be disjoint");
    if (!(detour >= 0.0)) throw ConfigError("detour amplitude must be >= 0");
    if (progress_samples < 1) throw ConfigError("progress_samples must be >= 1");
  }
};

inline Vector make_condition(const Vector& remaining, const Vector& task) {
  if (remaining.size() != 2 || task.size() != 2) throw DimensionError("conditions are planar");
  Vector s(4);
  s << remaining, task;
  return s;
}

inline Vector condition_remaining(const Vector& s) { return s.head(2); }
inline Vector condition_task(const Vector& s) { return s.tail(2); }

/// Signed bow amplitude (in units of the detour) of 1-based mode `mode_id`:
/// 0 for mode 1, then +1, -1, +2, -2, ...
inline double mode_bow(int mode_id) {
  if (mode_id <= 1) return 0.0;
  const int j = mode_id - 1;
  const double level = (j + 1) / 2;
  return (j % 2 == 1) ? level : -level;
}

/// Waypoints p_0 .. p_horizon of the expert for a remaining displacement
/// under a task displacement. The bow amplitude shrinks linearly once the
/// remaining distance drops below id_inner.
inline std::vector<Eigen::Vector2d> expert_waypoints(const Vector& remaining, const Vector& task,
                                                     int mode_id, const MixtureTaskSpec& spec) {
  if (remaining.size() != 2 || task.size() != 2) throw DimensionError("expert targets are planar");
  const Eigen::Vector2d r(remaining[0], remaining[1]);
  const double len = r.norm();
  const double speed = Eigen::Vector2d(task[0], task[1]).norm() / spec.horizon;
  // Steps needed to arrive at cruise speed; the bow spans min(exec_count, that).
  const double arrive = speed > 0.0 ? len / speed : 0.0;
  const double bow_span = std::min(static_cast<double>(spec.exec_count), arrive);
  const Eigen::Vector2d side = len > 1e-12 ? Eigen::Vector2d(-r.y(), r.x()) / len
                                           : Eigen::Vector2d(0.0, 1.0);
  const double shrink = spec.id_inner > 0.0 ? std::min(1.0, len / spec.id_inner) : 1.0;
  const double amplitude = spec.detour * mode_bow(mode_id) * shrink;

  std::vector<Eigen::Vector2d> pts(static_cast<std::size_t>(spec.horizon) + 1);
  for (int i = 0; i <= spec.horizon; ++i) {
    const double progress = arrive > 0.0 ? std::min(1.0, i / arrive) : 1.0;
    Eigen::Vector2d p = progress * r;
    if (bow_span > 0.0 && i < bow_span)
      p += amplitude * std::sin(std::numbers::pi * i / bow_span) * side;
    pts[static_cast<std::size_t>(i)] = p;
  }
  return pts;
}

/// Expert chunk (raw units): successive displacements, time-major.
inline Vector expert_chunk(const Vector& remaining, const Vector& task, int mode_id,
                           const MixtureTaskSpec& spec) {
  if (mode_id < 1 || mode_id > spec.modes) throw ConfigError("mode id out of range");
  const auto pts = expert_waypoints(remaining, task, mode_id, spec);
  Vector chunk(spec.chunk_dim());
  for (int i = 0; i < spec.horizon; ++i) {
    const Eigen::Vector2d d = pts[static_cast<std::size_t>(i) + 1] - pts[static_cast<std::size_t>(i)];
    chunk[2 * i] = d.x();
    chunk[2 * i + 1] = d.y();
  }
  return chunk;
}

inline Vector expert_chunk(const Vector& condition, int mode_id, const MixtureTaskSpec& spec) {
  return expert_chunk(condition_remaining(condition), condition_task(condition), mode_id, spec);
}

inline Eigen::Vector2d sample_goal(Split split, const MixtureTaskSpec& spec, Rng& rng) {
  const double inner = split == Split::id ? spec.id_inner : spec.ood_inner;
  const double outer = split == Split::id ? spec.id_outer : spec.ood_outer;
  const double radius = rng.uniform(inner, outer);
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

/// First-call condition of an episode from the origin to a fresh goal.
inline Vector sample_condition(Split split, const MixtureTaskSpec& spec, Rng& rng) {
  const Vector goal = sample_goal(split, spec, rng);
  return make_condition(goal, goal);
}

/// For each ID goal: the start state plus states at random progress along
/// the task, each with `modes` exact expert chunks (point-mass conditionals).
inline std::vector<TrainingSample> gen_mixture_dataset(const MixtureTaskSpec& spec,
                                                       int n_conditions, Rng& rng) {
  spec.validate();
  if (n_conditions < 1) throw ConfigError("n_conditions must be >= 1");
  std::vector<TrainingSample> data;
  data.reserve(static_cast<std::size_t>(n_conditions) * spec.progress_samples * spec.modes);
  for (int c = 0; c < n_conditions; ++c) {
    const Vector goal = sample_goal(Split::id, spec, rng);
    for (int k = 0; k < spec.progress_samples; ++k) {
      const double left = k == 0 ? 1.0 : rng.uniform();
      const Vector s = make_condition(left * goal, goal);
      for (int m = 1; m <= spec.modes; ++m) data.push_back({s, expert_chunk(s, m, spec), m});
    }
  }
  return data;
}

/// Expert modes for condition s in normalized chunk space, equal weights.
inline std::vector<Mode> expert_modes(const Vector& condition, const MixtureTaskSpec& spec,
                                      const Normalizer& norm) {
  std::vector<Mode> modes;
  for (int m = 1; m <= spec.modes; ++m)
    modes.push_back({1.0 / spec.modes, norm.normalize(expert_chunk(condition, m, spec))});
  return modes;
}

struct ModeDistance {
  double distance = 0.0;
  int mode_id = 1;
};

/// Closest expert mode to a normalized chunk; ties go to the lower id.
inline ModeDistance nearest_mode_distance(const Vector& chunk, const Vector& condition,
                                          const MixtureTaskSpec& spec, const Normalizer& norm) {
  ModeDistance best{std::numeric_limits<double>::infinity(), 1};
  for (int m = 1; m <= spec.modes; ++m) {
    const double d = (chunk - norm.normalize(expert_chunk(condition, m, spec))).norm();
    if (d < best.distance) best = {d, m};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Point-mass environment and receding-horizon rollouts.

struct PointMassState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  int step_index = 0;
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
};

inline PointMassState env_step(PointMassState state, const Eigen::Vector2d& action,
                               double max_action = 0.25) {
  Eigen::Vector2d a = action;
  for (int i = 0; i < 2; ++i) {
    if (std::isnan(a[i])) a[i] = 0.0;
    a[i] = std::clamp(a[i], -max_action, max_action);
  }
  state.position += a;
  state.step_index += 1;
  return state;
}

struct Protocol {
  int horizon = 16;
  int exec_count = 8;
  int total_steps = 300;
  double success_tol = 0.05;
  double max_action = 0.25;

  void validate() const {
    if (horizon < 1) throw ConfigError("protocol horizon must be >= 1");
    if (exec_count < 1 || exec_count > horizon)
      throw ConfigError("exec_count must lie in [1, horizon]");
    if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
    if (!(success_tol >= 0.0)) throw ConfigError("success_tol must be >= 0");
  }
};

/// Output of one planning call. `actions` is a raw chunk (horizon x 2,
/// time-major). `score` is an optional scalar OOD signal (NaN if unused).
struct PlanResult {
  Vector actions;
  InferenceTrace trace;
  double score = std::numeric_limits<double>::quiet_NaN();
};

struct PlanRecord {
  int index = 0;
  int env_step = 0;
  Vector condition;
  InferenceTrace trace;
  double score = std::numeric_limits<double>::quiet_NaN();
  bool flagged = false;
};

struct EpisodeRecord {
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  Eigen::Vector2d final_position = Eigen::Vector2d::Zero();
  std::vector<PlanRecord> plans;
  std::vector<Eigen::Vector2d> executed;
  bool success = false;
  std::optional<int> t_report;
  int total_steps = 300;
  int steps_taken = 0;
  std::string failure;
};

using Policy = std::function<PlanResult(const Vector& condition, Rng& rng)>;
/// Returns true when the episode so far (latest plan last) should be reported as OOD.
using Monitor = std::function<bool(const EpisodeRecord& episode)>;

/// Receding-horizon loop: plan from the current condition, let the monitor
/// inspect the call, execute the first exec_count actions, repeat. Ends on
/// success, a monitor flag, policy failure, or the step budget.
inline EpisodeRecord rollout_episode(const Policy& policy, const Eigen::Vector2d& goal,
                                     const Protocol& protocol, const Monitor& monitor, Rng& rng) {
  protocol.validate();
  EpisodeRecord ep;
  ep.goal = goal;
  ep.total_steps = protocol.total_steps;
  PointMassState state;
  state.goal = goal;
  const Eigen::Vector2d task = goal - state.position;
  auto reached = [&] { return (state.position - goal).norm() <= protocol.success_tol; };

  ep.success = reached();
  while (!ep.success && state.step_index < protocol.total_steps) {
    PlanRecord rec;
    rec.index = static_cast<int>(ep.plans.size());
    rec.env_step = state.step_index;
    rec.condition = make_condition(goal - state.position, task);
    PlanResult plan;
    try {
      plan = policy(rec.condition, rng);
      if (plan.actions.size() < 2 * protocol.exec_count)
        throw DimensionError("policy returned a chunk shorter than exec_count actions");
    } catch (const std::exception& e) {
      ep.failure = e.what();
      break;
    }
    rec.trace = std::move(plan.trace);
    rec.score = plan.score;
    ep.plans.push_back(std::move(rec));
    if (monitor && monitor(ep)) {
      ep.plans.back().flagged = true;
      ep.t_report = state.step_index;
      break;
    }
    for (int i = 0; i < protocol.exec_count && state.step_index < protocol.total_steps; ++i) {
      const Eigen::Vector2d action(plan.actions[2 * i], plan.actions[2 * i + 1]);
      state = env_step(state, action, protocol.max_action);
      ep.executed.push_back(action);
      if (reached()) {
        ep.success = true;
        break;
      }
    }
  }
  ep.final_position = state.position;
  ep.steps_taken = state.step_index;
  return ep;
}

}  // namespace geco
