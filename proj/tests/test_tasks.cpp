#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "geco/tasks.hpp"

using namespace geco;

namespace {

Eigen::Vector2d chunk_sum(const Vector& chunk) {
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i + 1 < chunk.size(); i += 2) s += Eigen::Vector2d(chunk[i], chunk[i + 1]);
  return s;
}

double chebyshev_waypoint_distance(const Vector& a, const Vector& b) {
  Eigen::Vector2d pa = Eigen::Vector2d::Zero(), pb = Eigen::Vector2d::Zero();
  double worst = 0.0;
  for (Eigen::Index i = 0; i + 1 < a.size(); i += 2) {
    pa += Eigen::Vector2d(a[i], a[i + 1]);
    pb += Eigen::Vector2d(b[i], b[i + 1]);
    worst = std::max(worst, (pa - pb).norm());
  }
  return worst;
}

PlanResult expert_plan(const Vector& condition, const MixtureTaskSpec& task, int mode) {
  PlanResult r;
  r.actions = expert_chunk(condition, mode, task);
  r.trace.nfe = 1;
  r.trace.residuals = {0.0};
  r.score = 0.0;
  return r;
}

}  // namespace

TEST(MixtureTaskSpec, Validation) {
  MixtureTaskSpec t;
  EXPECT_NO_THROW(t.validate());
  t.ood_inner = 0.9;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.modes = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.exec_count = 17;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(ModeBow, AlternatingSides) {
  EXPECT_EQ(mode_bow(1), 0.0);
  EXPECT_EQ(mode_bow(2), 1.0);
  EXPECT_EQ(mode_bow(3), -1.0);
  EXPECT_EQ(mode_bow(4), 2.0);
  EXPECT_EQ(mode_bow(5), -2.0);
}

TEST(GenMixtureDataset, ZeroDetourGivesIdenticalModes) {
  MixtureTaskSpec t;
  t.detour = 0.0;
  Rng rng(1);
  const auto data = gen_mixture_dataset(t, 20, rng);
  for (std::size_t i = 0; i < data.size(); i += 2) {
    EXPECT_EQ(data[i].condition, data[i + 1].condition);
    EXPECT_TRUE(data[i].chunk.isApprox(data[i + 1].chunk, 1e-15));
  }
}

TEST(GenMixtureDataset, ChunksReachTheirTarget) {
  MixtureTaskSpec t;
  Rng rng(2);
  for (const auto& smp : gen_mixture_dataset(t, 200, rng)) {
    const Eigen::Vector2d target(smp.condition[0], smp.condition[1]);
    EXPECT_LT((chunk_sum(smp.chunk) - target).norm(), 1e-12);
  }
}

TEST(GenMixtureDataset, LayoutAndModeIds) {
  MixtureTaskSpec t;
  t.modes = 3;
  t.progress_samples = 2;
  Rng rng(3);
  const auto data = gen_mixture_dataset(t, 5, rng);
  ASSERT_EQ(data.size(), 5u * 2 * 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(data[i].mode_id, static_cast<int>(i % 3) + 1);
    EXPECT_EQ(data[i].chunk.size(), 32);
    EXPECT_EQ(data[i].condition.size(), 4);
  }
  // The first condition of each goal is the start state: remaining == task.
  for (std::size_t g = 0; g < 5; ++g) {
    const auto& s = data[g * 6].condition;
    EXPECT_EQ(condition_remaining(s), condition_task(s));
    const double r = condition_task(s).norm();
    EXPECT_GE(r, t.id_inner);
    EXPECT_LE(r, t.id_outer);
  }
}

TEST(GenMixtureDataset, ModesSeparatedByDetour) {
  MixtureTaskSpec t;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vector s = sample_condition(Split::id, t, rng);
    const double d = chebyshev_waypoint_distance(expert_chunk(s, 1, t), expert_chunk(s, 2, t));
    EXPECT_GE(d, t.detour - 1e-12);
  }
}

TEST(GenMixtureDataset, DeterministicPerSeed) {
  MixtureTaskSpec t;
  Rng a(5), b(5);
  const auto d1 = gen_mixture_dataset(t, 30, a);
  const auto d2 = gen_mixture_dataset(t, 30, b);
  ASSERT_EQ(d1.size(), d2.size());
  for (std::size_t i = 0; i < d1.size(); ++i) {
    EXPECT_EQ(d1[i].chunk, d2[i].chunk);
    EXPECT_EQ(d1[i].condition, d2[i].condition);
  }
}

TEST(GenMixtureDataset, ExpertNeverExceedsActionClamp) {
  MixtureTaskSpec t;
  Rng rng(6);
  for (const auto& smp : gen_mixture_dataset(t, 300, rng))
    EXPECT_LE(smp.chunk.cwiseAbs().maxCoeff(), Protocol{}.max_action);
}

TEST(SampleCondition, RadiiInsideSplit) {
  MixtureTaskSpec t;
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const double id = condition_task(sample_condition(Split::id, t, rng)).norm();
    const double ood = condition_task(sample_condition(Split::ood, t, rng)).norm();
    EXPECT_GE(id, 0.5);
    EXPECT_LE(id, 1.0);
    EXPECT_GE(ood, 1.5);
    EXPECT_LE(ood, 2.0);
  }
}

// Chi-square goodness of fit of the radius histogram against U(0.5, 1.0).
TEST(SampleCondition, RadiusHistogramUniform) {
  MixtureTaskSpec t;
  Rng rng(8);
  constexpr int kBins = 10, kSamples = 10000;
  std::array<int, kBins> counts{};
  for (int i = 0; i < kSamples; ++i) {
    const double r = sample_goal(Split::id, t, rng).norm();
    const int b = std::min(kBins - 1, static_cast<int>((r - 0.5) / 0.5 * kBins));
    counts[static_cast<std::size_t>(b)] += 1;
  }
  const double expected = static_cast<double>(kSamples) / kBins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 21.666);  // 99th percentile, 9 degrees of freedom
}

TEST(NearestModeDistance, ExactModeAndTieRule) {
  MixtureTaskSpec t;
  Rng rng(9);
  const Vector s = sample_condition(Split::id, t, rng);
  const auto norm = Normalizer::identity(t.chunk_dim());
  const auto m1 = nearest_mode_distance(expert_chunk(s, 1, t), s, t, norm);
  EXPECT_EQ(m1.mode_id, 1);
  EXPECT_EQ(m1.distance, 0.0);
  const Vector mid = 0.5 * (expert_chunk(s, 1, t) + expert_chunk(s, 2, t));
  EXPECT_EQ(nearest_mode_distance(mid, s, t, norm).mode_id, 1);
}

TEST(NearestModeDistance, MatchesBruteForce) {
  MixtureTaskSpec t;
  t.modes = 4;
  Rng rng(10);
  const auto norm = Normalizer{Vector::Constant(t.chunk_dim(), 0.01), Vector::Constant(t.chunk_dim(), 0.1)};
  for (int i = 0; i < 100; ++i) {
    const Vector s = sample_condition(Split::id, t, rng);
    const Vector x = rng.normal_vector(t.chunk_dim());
    double best = INFINITY;
    int best_id = 0;
    for (int m = 1; m <= t.modes; ++m) {
      const double d = (x - norm.normalize(expert_chunk(s, m, t))).norm();
      if (d < best) {
        best = d;
        best_id = m;
      }
    }
    const auto got = nearest_mode_distance(x, s, t, norm);
    EXPECT_EQ(got.mode_id, best_id);
    EXPECT_DOUBLE_EQ(got.distance, best);
  }
}

TEST(EnvStep, ZeroActionAndClamp) {
  PointMassState st;
  st.position = {0.3, -0.1};
  auto next = env_step(st, Eigen::Vector2d::Zero());
  EXPECT_EQ(next.position, st.position);
  EXPECT_EQ(next.step_index, 1);
  next = env_step(st, {10.0, 0.0});
  EXPECT_TRUE(next.position.isApprox(Eigen::Vector2d(0.55, -0.1)));
  next = env_step(st, {std::nan(""), -10.0});
  EXPECT_TRUE(next.position.isApprox(Eigen::Vector2d(0.3, -0.35)));
}

TEST(EnvStep, ExpertReplayReachesGoal) {
  MixtureTaskSpec t;
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Vector s = sample_condition(Split::id, t, rng);
    const Vector chunk = expert_chunk(s, 1 + static_cast<int>(rng.uniform_index(2)), t);
    PointMassState st;
    for (Eigen::Index k = 0; k < chunk.size(); k += 2) st = env_step(st, {chunk[k], chunk[k + 1]});
    EXPECT_LT((st.position - Eigen::Vector2d(s[0], s[1])).norm(), 1e-9);
  }
}

TEST(RolloutEpisode, ExpertPolicySucceeds) {
  MixtureTaskSpec t;
  Protocol proto;
  Rng rng(12);
  for (int mode : {1, 2}) {
    const Eigen::Vector2d goal = sample_goal(Split::id, t, rng);
    const Policy policy = [&](const Vector& s, Rng&) { return expert_plan(s, t, mode); };
    const auto ep = rollout_episode(policy, goal, proto, {}, rng);
    EXPECT_TRUE(ep.success);
    // The expert covers the task in horizon steps: two calls of exec_count.
    EXPECT_EQ(ep.plans.size(), 2u);
    EXPECT_LE(ep.steps_taken, t.horizon);
    EXPECT_FALSE(ep.t_report.has_value());
  }
}

TEST(RolloutEpisode, ConditionsCarryRemainingAndTask) {
  MixtureTaskSpec t;
  const Eigen::Vector2d goal(0.8, 0.0);
  const Policy policy = [&](const Vector& s, Rng&) { return expert_plan(s, t, 1); };
  Rng rng(0);
  const auto ep = rollout_episode(policy, goal, Protocol{}, {}, rng);
  ASSERT_EQ(ep.plans.size(), 2u);
  EXPECT_TRUE(ep.plans[1].condition.isApprox((Vector(4) << 0.4, 0.0, 0.8, 0.0).finished()));
  EXPECT_EQ(ep.plans[1].env_step, 8);
}

TEST(RolloutEpisode, MonitorFlagOnFirstCall) {
  MixtureTaskSpec t;
  const Policy policy = [&](const Vector& s, Rng&) { return expert_plan(s, t, 1); };
  Rng rng(0);
  const auto ep = rollout_episode(policy, {0.7, 0.1}, Protocol{}, [](const EpisodeRecord&) { return true; }, rng);
  ASSERT_TRUE(ep.t_report.has_value());
  EXPECT_EQ(*ep.t_report, 0);
  EXPECT_FALSE(ep.success);
  EXPECT_TRUE(ep.plans.back().flagged);
}

TEST(RolloutEpisode, ZeroBudgetEndsImmediately) {
  Protocol proto;
  proto.total_steps = 0;
  const Policy never = [](const Vector&, Rng&) -> PlanResult { throw std::runtime_error("called"); };
  Rng rng(0);
  auto ep = rollout_episode(never, {0.7, 0.1}, proto, {}, rng);
  EXPECT_FALSE(ep.success);
  EXPECT_TRUE(ep.plans.empty());
  ep = rollout_episode(never, {0.01, 0.0}, proto, {}, rng);
  EXPECT_TRUE(ep.success);
}

TEST(RolloutEpisode, PolicyFailureRecorded) {
  const Policy broken = [](const Vector&, Rng&) -> PlanResult { throw NumericError("boom"); };
  Rng rng(0);
  const auto ep = rollout_episode(broken, {0.7, 0.1}, Protocol{}, {}, rng);
  EXPECT_FALSE(ep.success);
  EXPECT_EQ(ep.failure, "boom");
}

TEST(RolloutEpisode, StepBudgetRespected) {
  const Policy idle = [](const Vector&, Rng&) {
    PlanResult r;
    r.actions = Vector::Zero(32);
    return r;
  };
  Protocol proto;
  proto.total_steps = 20;
  Rng rng(0);
  const auto ep = rollout_episode(idle, {0.7, 0.1}, proto, {}, rng);
  EXPECT_EQ(ep.steps_taken, 20);
  EXPECT_EQ(ep.plans.size(), 3u);
  EXPECT_FALSE(ep.success);
}
