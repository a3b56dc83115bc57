#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "geco/errors.hpp"
#include "geco/inference.hpp"
#include "geco/rng.hpp"
#include "geco/tasks.hpp"

namespace geco {

/// Online filter parameters. Defaults are the fixed published values.
struct FilterConfig {
  int window = 5;
  double ma_threshold = 0.6;
  double leak = 0.0;
  double bucket_threshold = 0.5;
  double trigger = 0.7;

  void validate() const {
    if (window < 1) throw ConfigError("moving-average window must be >= 1");
    if (!(leak >= 0.0 && leak <= 1.0)) throw ConfigError("leak must lie in [0, 1]");
    if (!(trigger > 0.0)) throw ConfigError("bucket trigger level must be > 0");
  }
};

enum class Label { id, ood };

struct ScoredPlan {
  double score = 0.0;
  Label label = Label::id;
  int episode = 0;
  int plan = 0;
};

/// Residual norm at the last evaluated iterate.
inline double score_plan(const InferenceTrace& trace) {
  if (trace.residuals.empty()) throw ConfigError("score_plan: empty trace");
  return trace.residuals.back();
}

inline bool is_ood(double score, double threshold) { return score > threshold; }

struct FilterFlag {
  bool flag = false;
  std::optional<int> trigger_index;  // 1-based
};

/// r~_k = mean of the last min(w, k) values.
inline std::vector<double> moving_average_series(std::span<const double> values, int window) {
  if (window < 1) throw ConfigError("moving-average window must be >= 1");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    sum += values[k];
    if (k >= static_cast<std::size_t>(window)) sum -= values[k - static_cast<std::size_t>(window)];
    const std::size_t n = std::min(k + 1, static_cast<std::size_t>(window));
    out[k] = sum / static_cast<double>(n);
  }
  return out;
}

/// b_k = max(0, (1 - leak) b_{k-1} + (r_k - tau)_+), b_0 = 0.
inline std::vector<double> leaky_bucket_series(std::span<const double> values,
                                               const FilterConfig& cfg) {
  std::vector<double> out(values.size());
  double b = 0.0;
  for (std::size_t k = 0; k < values.size(); ++k) {
    b = std::max(0.0, (1.0 - cfg.leak) * b + std::max(0.0, values[k] - cfg.bucket_threshold));
    out[k] = b;
  }
  return out;
}

inline FilterFlag moving_average_flag(std::span<const double> values, const FilterConfig& cfg) {
  cfg.validate();
  if (values.empty()) throw ConfigError("moving_average_flag: empty residual sequence");
  const auto avg = moving_average_series(values, cfg.window);
  for (std::size_t k = 0; k < avg.size(); ++k)
    if (avg[k] > cfg.ma_threshold) return {true, static_cast<int>(k) + 1};
  return {};
}

inline FilterFlag leaky_bucket_flag(std::span<const double> values, const FilterConfig& cfg) {
  cfg.validate();
  if (values.empty()) throw ConfigError("leaky_bucket_flag: empty residual sequence");
  const auto b = leaky_bucket_series(values, cfg);
  for (std::size_t k = 0; k < b.size(); ++k)
    if (b[k] >= cfg.trigger) return {true, static_cast<int>(k) + 1};
  return {};
}

/// Mann-Whitney AUROC with half credit for ties: P(pos > neg) + P(pos = neg)/2.
inline double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty())
    throw ConfigError("auroc needs at least one positive and one negative score");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, true});
  for (double s : negatives) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Average ranks over tie groups (1-based).
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      pos_in_group += all[j].positive ? 1 : 0;
      ++j;
    }
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    rank_sum_pos += avg_rank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double n_pos = static_cast<double>(positives.size());
  const double n_neg = static_cast<double>(negatives.size());
  return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline double auroc(std::span<const ScoredPlan> scored) {
  std::vector<double> pos, neg;
  for (const ScoredPlan& p : scored) (p.label == Label::ood ? pos : neg).push_back(p.score);
  return auroc(pos, neg);
}

struct OperatingPoint {
  double threshold = 0.0;  // flag iff score >= threshold
  double tpr = 0.0;
  double tnr = 0.0;
};

/// Sweeps the observed scores as thresholds (flag iff score >= threshold) and
/// keeps the one whose TPR is closest to target_tpr; ties prefer higher TNR.
inline OperatingPoint operating_point(std::span<const ScoredPlan> scored,
                                      double target_tpr = 0.9) {
  std::vector<double> pos, neg;
  for (const ScoredPlan& p : scored) (p.label == Label::ood ? pos : neg).push_back(p.score);
  if (pos.empty() || neg.empty())
    throw ConfigError("operating_point needs both ID and OOD plans");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> candidates;
  candidates.reserve(pos.size() + neg.size());
  candidates.insert(candidates.end(), pos.begin(), pos.end());
  candidates.insert(candidates.end(), neg.begin(), neg.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  auto count_at_least = [](const std::vector<double>& sorted, double t) {
    return static_cast<double>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
  };
  OperatingPoint best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    const double tpr = count_at_least(pos, t) / static_cast<double>(pos.size());
    const double tnr = 1.0 - count_at_least(neg, t) / static_cast<double>(neg.size());
    const double gap = std::abs(tpr - target_tpr);
    if (gap < best_gap || (gap == best_gap && tnr > best.tnr)) {
      best = {t, tpr, tnr};
      best_gap = gap;
    }
  }
  return best;
}

/// Mean over episodes of 1 - t_report / T_total; never-flagged episodes count 0.
inline double time_saved(std::span<const EpisodeRecord> ood_episodes) {
  if (ood_episodes.empty()) return 0.0;
  double total = 0.0;
  for (const EpisodeRecord& ep : ood_episodes) {
    if (ep.total_steps <= 0) throw ConfigError("time_saved: episode horizon must be > 0");
    if (ep.t_report)
      total += 1.0 - static_cast<double>(*ep.t_report) / static_cast<double>(ep.total_steps);
  }
  return total / static_cast<double>(ood_episodes.size());
}

/// min(J, n) distinct plan indices in increasing order.
inline std::vector<int> sample_plan_indices(int n_plans, int per_episode, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(std::max(0, n_plans)));
  std::iota(idx.begin(), idx.end(), 0);
  const int take = std::min(n_plans, per_episode);
  for (int i = 0; i < take; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n_plans - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(std::max(0, take)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace geco
