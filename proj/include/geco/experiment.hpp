#pragma once

// End-to-end experiment plumbing shared by the CLI and the acceptance suite:
// trained-model bundles, policies, episode batches and their summaries, and
// the OOD evaluation protocol.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "geco/baseline.hpp"
#include "geco/checkpoint.hpp"
#include "geco/inference.hpp"
#include "geco/normalizer.hpp"
#include "geco/ood.hpp"
#include "geco/parallel.hpp"
#include "geco/tasks.hpp"
#include "geco/trainer.hpp"

namespace geco {

inline constexpr const char* kVersion = "geco 1.0.0";

/// Everything needed to act with a trained field.
struct TrainedModel {
  Head head = Head::geco;
  FieldParams params;
  Normalizer normalizer;
  MixtureTaskSpec task;
  DecaySchedule decay;
};

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

inline double parse_hexfloat(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw FormatError("bad hex float '" + s + "' in checkpoint metadata");
  return v;
}

inline std::string encode_vector(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += hexfloat(v[i]);
  }
  return out;
}

inline Vector decode_vector(const std::string& s) {
  std::istringstream in(s);
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) vals.push_back(parse_hexfloat(tok));
  return Eigen::Map<const Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline const std::string& require(const Metadata& md, const std::string& key) {
  auto it = md.find(key);
  if (it == md.end()) throw FormatError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace detail

/// Model fields that round-trip through checkpoint metadata (bit-exact).
inline Metadata model_metadata(const TrainedModel& m) {
  Metadata md;
  md["head"] = to_string(m.head);
  md["norm.shift"] = detail::encode_vector(m.normalizer.shift);
  md["norm.scale"] = detail::encode_vector(m.normalizer.scale);
  md["task.horizon"] = std::to_string(m.task.horizon);
  md["task.modes"] = std::to_string(m.task.modes);
  md["task.exec_count"] = std::to_string(m.task.exec_count);
  md["task.progress_samples"] = std::to_string(m.task.progress_samples);
  md["task.detour"] = detail::hexfloat(m.task.detour);
  md["task.id_inner"] = detail::hexfloat(m.task.id_inner);
  md["task.id_outer"] = detail::hexfloat(m.task.id_outer);
  md["task.ood_inner"] = detail::hexfloat(m.task.ood_inner);
  md["task.ood_outer"] = detail::hexfloat(m.task.ood_outer);
  md["decay.scale"] = detail::hexfloat(m.decay.scale);
  md["decay.onset"] = detail::hexfloat(m.decay.onset);
  md["normalization"] = "per-dim shift=mean scale=max|a-mean| onto [-1,1]";
  return md;
}

inline TrainedModel model_from_checkpoint(const Checkpoint& ck) {
  const Metadata& md = ck.metadata;
  TrainedModel m;
  m.params = ck.params;
  const std::string& head = detail::require(md, "head");
  if (head == "geco") m.head = Head::geco;
  else if (head == "rectified_flow") m.head = Head::rectified_flow;
  else throw FormatError("unknown head '" + head + "' in checkpoint");
  m.normalizer.shift = detail::decode_vector(detail::require(md, "norm.shift"));
  m.normalizer.scale = detail::decode_vector(detail::require(md, "norm.scale"));
  auto as_int = [&](const char* k) { return std::stoi(detail::require(md, k)); };
  auto as_real = [&](const char* k) { return detail::parse_hexfloat(detail::require(md, k)); };
  m.task.horizon = as_int("task.horizon");
  m.task.modes = as_int("task.modes");
  m.task.exec_count = as_int("task.exec_count");
  m.task.progress_samples = as_int("task.progress_samples");
  m.task.detour = as_real("task.detour");
  m.task.id_inner = as_real("task.id_inner");
  m.task.id_outer = as_real("task.id_outer");
  m.task.ood_inner = as_real("task.ood_inner");
  m.task.ood_outer = as_real("task.ood_outer");
  m.decay.scale = as_real("decay.scale");
  m.decay.onset = as_real("decay.onset");
  m.task.validate();
  const auto extra = m.head == Head::geco ? 0 : 1;
  if (m.normalizer.shift.size() != m.task.chunk_dim() ||
      m.normalizer.scale.size() != m.task.chunk_dim() ||
      m.params.spec.output_dim != static_cast<std::size_t>(m.task.chunk_dim()) ||
      m.params.spec.input_dim !=
          static_cast<std::size_t>(m.task.chunk_dim() + MixtureTaskSpec::condition_dim() + extra))
    throw DimensionError("checkpoint network does not match its task dimensions");
  return m;
}

/// Normalized dataset plus the normalizer fitted on it.
struct PreparedData {
  std::vector<TrainingSample> samples;
  Normalizer normalizer;
};

inline PreparedData prepare_dataset(const MixtureTaskSpec& task, int n_goals, std::uint64_t seed) {
  Rng rng(derive_seed(seed, Stream::data));
  const auto raw = gen_mixture_dataset(task, n_goals, rng);
  PreparedData out;
  out.normalizer = fit_normalizer(raw);
  out.samples = normalize_dataset(raw, out.normalizer);
  return out;
}

inline TrainedModel train_model(const MixtureTaskSpec& task, int n_goals, const TrainConfig& cfg,
                                const LogCallback& on_log = {}, TrainingLog* log_out = nullptr) {
  PreparedData data = prepare_dataset(task, n_goals, cfg.seed);
  TrainResult res = train(cfg, data.samples, on_log);
  if (log_out) *log_out = res.log;
  return {cfg.head, std::move(res.params), std::move(data.normalizer), task, cfg.decay};
}

// ---------------------------------------------------------------------------
// Policies

/// GeCO planning call: adaptive descent, denormalized chunk, final-norm score.
inline Policy geco_policy(const TrainedModel& model, const InferConfig& cfg) {
  if (model.head != Head::geco) throw ConfigError("geco_policy needs a GeCO checkpoint");
  return [&model, cfg](const Vector& condition, Rng& rng) {
    PlanResult out;
    out.trace = geco_infer(model.params, condition, cfg, rng);
    if (out.trace.stop == StopReason::non_finite)
      throw NumericError("field produced non-finite values");
    out.actions = model.normalizer.denormalize(out.trace.chunk);
    out.score = score_plan(out.trace);
    return out;
  };
}

/// Rectified-flow planning call: fixed-step Euler, scored by the FM-loss proxy.
inline Policy rf_policy(const TrainedModel& model, int n_steps) {
  if (model.head != Head::rectified_flow)
    throw ConfigError("rf_policy needs a rectified-flow checkpoint");
  return [&model, n_steps](const Vector& condition, Rng& rng) {
    PlanResult out;
    FlowSample sample = rf_sample(model.params, condition, n_steps, rng);
    out.trace.nfe = sample.nfe;
    out.trace.updates = sample.nfe;
    out.trace.stop = StopReason::budget;
    out.trace.chunk = sample.chunk;
    out.actions = model.normalizer.denormalize(sample.chunk);
    out.score = fm_loss_proxy(model.params, condition, sample.chunk, rng);
    return out;
  };
}

inline Protocol protocol_for(const MixtureTaskSpec& task, Protocol base) {
  base.horizon = task.horizon;
  base.exec_count = task.exec_count;
  return base;
}

/// Episode i of a split uses the goal and policy streams keyed by (split, i)
/// only, so different policies face identical goals.
inline std::vector<EpisodeRecord> run_episodes(const Policy& policy, const MixtureTaskSpec& task,
                                               Split split, int n, const Protocol& protocol,
                                               std::uint64_t seed, const Monitor& monitor = {},
                                               std::size_t workers = 1) {
  if (n < 0) throw ConfigError("episode count must be >= 0");
  std::vector<EpisodeRecord> out(static_cast<std::size_t>(n));
  const std::uint64_t split_key = split == Split::id ? 0 : (std::uint64_t{1} << 32);
  parallel_for(out.size(), workers, [&](std::size_t i) {
    Rng goal_rng(derive_seed(seed, Stream::eval, split_key + i));
    const Eigen::Vector2d goal = sample_goal(split, task, goal_rng);
    Rng rng(derive_seed(seed, Stream::inference, split_key + i));
    out[i] = rollout_episode(policy, goal, protocol, monitor, rng);
  });
  return out;
}

struct RolloutSummary {
  int budget = 0;
  int episodes = 0;
  int plans = 0;
  double success_rate = 0.0;
  double mean_nfe = 0.0;
  double median_nfe = 0.0;
  double converged_fraction = 0.0;
  std::map<int, int> nfe_histogram;
};

inline RolloutSummary summarize(const std::vector<EpisodeRecord>& episodes, int budget) {
  RolloutSummary s;
  s.budget = budget;
  s.episodes = static_cast<int>(episodes.size());
  std::vector<int> nfes;
  int successes = 0, converged = 0;
  for (const EpisodeRecord& ep : episodes) {
    successes += ep.success ? 1 : 0;
    for (const PlanRecord& p : ep.plans) {
      nfes.push_back(p.trace.nfe);
      s.nfe_histogram[p.trace.nfe] += 1;
      converged += p.trace.stop == StopReason::converged ? 1 : 0;
    }
  }
  s.plans = static_cast<int>(nfes.size());
  if (s.episodes > 0) s.success_rate = static_cast<double>(successes) / s.episodes;
  if (!nfes.empty()) {
    double sum = 0.0;
    for (int v : nfes) sum += v;
    s.mean_nfe = sum / static_cast<double>(nfes.size());
    std::sort(nfes.begin(), nfes.end());
    const std::size_t mid = nfes.size() / 2;
    s.median_nfe = nfes.size() % 2 ? nfes[mid] : 0.5 * (nfes[mid - 1] + nfes[mid]);
    s.converged_fraction = static_cast<double>(converged) / static_cast<double>(nfes.size());
  }
  return s;
}

// ---------------------------------------------------------------------------
// OOD evaluation

enum class FilterKind { raw, moving_average, leaky_bucket };

inline const char* to_string(FilterKind f) {
  switch (f) {
    case FilterKind::raw: return "raw";
    case FilterKind::moving_average: return "moving_average";
    case FilterKind::leaky_bucket: return "leaky_bucket";
  }
  return "?";
}

/// Per-plan detector statistic for one episode: the raw plan score, or the
/// running filter statistic over the episode's sequence of plan scores.
inline std::vector<double> plan_statistics(const EpisodeRecord& ep, FilterKind kind,
                                           const FilterConfig& cfg) {
  std::vector<double> scores;
  scores.reserve(ep.plans.size());
  for (const PlanRecord& p : ep.plans) scores.push_back(p.score);
  switch (kind) {
    case FilterKind::raw: return scores;
    case FilterKind::moving_average: return moving_average_series(scores, cfg.window);
    case FilterKind::leaky_bucket: return leaky_bucket_series(scores, cfg);
  }
  return scores;
}

/// Online flag rule of each detector, applied to its per-plan statistic.
inline bool plan_flag(double statistic, FilterKind kind, const FilterConfig& cfg,
                      double raw_threshold) {
  switch (kind) {
    case FilterKind::raw: return statistic >= raw_threshold;
    case FilterKind::moving_average: return statistic > cfg.ma_threshold;
    case FilterKind::leaky_bucket: return statistic >= cfg.trigger;
  }
  return false;
}

struct OodRow {
  std::string method;  // "geco_final_norm" or "fm_loss_proxy"
  FilterKind filter = FilterKind::raw;
  double auroc = 0.0;
  OperatingPoint op;
  double time_saved = 0.0;
  int id_plans = 0;
  int ood_plans = 0;
};

/// Scores a pair of episode sets (ID negatives, OOD positives) for every
/// filter variant. Uses min(J, available) random plans per episode.
inline std::vector<OodRow> score_episode_sets(const std::string& method,
                                              const std::vector<EpisodeRecord>& id_eps,
                                              const std::vector<EpisodeRecord>& ood_eps,
                                              const FilterConfig& cfg, int plans_per_episode,
                                              double target_tpr, std::uint64_t seed) {
  std::vector<OodRow> rows;
  for (FilterKind kind :
       {FilterKind::raw, FilterKind::moving_average, FilterKind::leaky_bucket}) {
    std::vector<ScoredPlan> scored;
    std::vector<std::vector<double>> ood_stats;
    Rng pick(derive_seed(seed, Stream::eval, 0xA0C));
    auto collect = [&](const std::vector<EpisodeRecord>& eps, Label label) {
      for (std::size_t e = 0; e < eps.size(); ++e) {
        auto stats = plan_statistics(eps[e], kind, cfg);
        for (int j : sample_plan_indices(static_cast<int>(stats.size()), plans_per_episode, pick))
          scored.push_back({stats[static_cast<std::size_t>(j)], label, static_cast<int>(e), j});
        if (label == Label::ood) ood_stats.push_back(std::move(stats));
      }
    };
    collect(id_eps, Label::id);
    collect(ood_eps, Label::ood);

    OodRow row;
    row.method = method;
    row.filter = kind;
    for (const ScoredPlan& p : scored) (p.label == Label::ood ? row.ood_plans : row.id_plans) += 1;
    if (row.id_plans > 0 && row.ood_plans > 0) {
      row.auroc = auroc(scored);
      row.op = operating_point(scored, target_tpr);
    }
    // Early reporting replayed over each OOD episode's plan sequence.
    std::vector<EpisodeRecord> reported;
    for (std::size_t e = 0; e < ood_eps.size(); ++e) {
      EpisodeRecord r;
      r.total_steps = ood_eps[e].total_steps;
      const auto& stats = ood_stats[e];
      for (std::size_t j = 0; j < stats.size(); ++j)
        if (plan_flag(stats[j], kind, cfg, row.op.threshold)) {
          r.t_report = ood_eps[e].plans[j].env_step;
          break;
        }
      reported.push_back(std::move(r));
    }
    row.time_saved = time_saved(reported);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace geco
