#include <gtest/gtest.h>

#include "geco/experiment.hpp"

using namespace geco;

namespace {

TrainConfig tiny(Head head) {
  TrainConfig cfg;
  cfg.steps = 40;
  cfg.hidden_dims = {16};
  cfg.seed = 5;
  cfg.head = head;
  cfg.decay.onset = 0.8;
  return cfg;
}

EpisodeRecord episode_with_scores(const std::vector<double>& scores) {
  EpisodeRecord ep;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    PlanRecord p;
    p.index = static_cast<int>(j);
    p.env_step = static_cast<int>(j) * 8;
    p.score = scores[j];
    ep.plans.push_back(p);
  }
  return ep;
}

}  // namespace

TEST(Experiment, MetadataRoundTripsBitExact) {
  MixtureTaskSpec task;
  task.detour = 0.123456789;
  const auto m = train_model(task, 10, tiny(Head::geco));
  const auto back = model_from_checkpoint(Checkpoint{m.params, model_metadata(m)});
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.normalizer.shift, m.normalizer.shift);
  EXPECT_EQ(back.normalizer.scale, m.normalizer.scale);
  EXPECT_EQ(back.task.detour, task.detour);
  EXPECT_EQ(back.decay.onset, 0.8);
  EXPECT_EQ(back.head, Head::geco);
}

TEST(Experiment, CheckpointDimensionsChecked) {
  MixtureTaskSpec task;
  const auto m = train_model(task, 10, tiny(Head::geco));
  auto md = model_metadata(m);
  md["task.horizon"] = "8";
  EXPECT_THROW(model_from_checkpoint(Checkpoint{m.params, md}), DimensionError);
  md = model_metadata(m);
  md.erase("norm.scale");
  EXPECT_THROW(model_from_checkpoint(Checkpoint{m.params, md}), FormatError);
  md = model_metadata(m);
  md["head"] = "diffusion";
  EXPECT_THROW(model_from_checkpoint(Checkpoint{m.params, md}), FormatError);
}

TEST(Experiment, PolicyHeadMustMatch) {
  MixtureTaskSpec task;
  const auto g = train_model(task, 10, tiny(Head::geco));
  const auto r = train_model(task, 10, tiny(Head::rectified_flow));
  EXPECT_THROW(rf_policy(g, 5), ConfigError);
  EXPECT_THROW(geco_policy(r, InferConfig{}), ConfigError);
}

TEST(Experiment, RunEpisodesDeterministicAndWorkerIndependent) {
  MixtureTaskSpec task;
  const auto m = train_model(task, 10, tiny(Head::geco));
  InferConfig ic;
  ic.k_max = 5;
  const auto proto = protocol_for(task, Protocol{});
  const auto policy = geco_policy(m, ic);
  const auto a = run_episodes(policy, task, Split::id, 4, proto, 3, {}, 1);
  const auto b = run_episodes(policy, task, Split::id, 4, proto, 3, {}, 3);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].final_position, b[i].final_position);
    ASSERT_EQ(a[i].plans.size(), b[i].plans.size());
    for (std::size_t j = 0; j < a[i].plans.size(); ++j)
      EXPECT_EQ(a[i].plans[j].score, b[i].plans[j].score);
  }
}

TEST(Experiment, RfPolicyUsesFixedSteps) {
  MixtureTaskSpec task;
  const auto m = train_model(task, 10, tiny(Head::rectified_flow));
  const auto eps =
      run_episodes(rf_policy(m, 7), task, Split::id, 2, protocol_for(task, Protocol{}), 1);
  for (const auto& ep : eps)
    for (const auto& p : ep.plans) EXPECT_EQ(p.trace.nfe, 7);
  EXPECT_EQ(summarize(eps, 7).mean_nfe, 7.0);
}

TEST(Summarize, EmptyAndCounts) {
  const auto s = summarize({}, 5);
  EXPECT_EQ(s.episodes, 0);
  EXPECT_EQ(s.plans, 0);
  EXPECT_EQ(s.success_rate, 0.0);

  EpisodeRecord a = episode_with_scores({0.1, 0.2});
  a.success = true;
  a.plans[0].trace.nfe = 3;
  a.plans[1].trace.nfe = 5;
  a.plans[1].trace.stop = StopReason::converged;
  EpisodeRecord b = episode_with_scores({0.3});
  b.plans[0].trace.nfe = 5;
  const auto t = summarize({a, b}, 5);
  EXPECT_EQ(t.episodes, 2);
  EXPECT_EQ(t.plans, 3);
  EXPECT_DOUBLE_EQ(t.success_rate, 0.5);
  EXPECT_DOUBLE_EQ(t.mean_nfe, 13.0 / 3.0);
  EXPECT_EQ(t.nfe_histogram.at(5), 2);
}

TEST(ScoreEpisodeSets, SeparatedAndIdenticalScores) {
  std::vector<EpisodeRecord> id, ood;
  for (int i = 0; i < 10; ++i) {
    id.push_back(episode_with_scores({0.1, 0.2}));
    ood.push_back(episode_with_scores({5.0, 6.0, 7.0}));
  }
  for (const auto& row : score_episode_sets("geco_final_norm", id, ood, FilterConfig{}, 20, 0.9, 1)) {
    EXPECT_EQ(row.auroc, 1.0) << to_string(row.filter);
    EXPECT_EQ(row.id_plans, 20);
    EXPECT_EQ(row.ood_plans, 30);
    // Every OOD episode is flagged at its first plan (env step 0).
    EXPECT_EQ(row.time_saved, 1.0) << to_string(row.filter);
  }
  const auto same = score_episode_sets("x", id, id, FilterConfig{}, 20, 0.9, 1);
  EXPECT_EQ(same[0].auroc, 0.5);
}

TEST(ScoreEpisodeSets, CapsPlansPerEpisode) {
  std::vector<double> many(30, 1.0);
  const std::vector<EpisodeRecord> id{episode_with_scores(many)};
  const std::vector<EpisodeRecord> ood{episode_with_scores(many)};
  const auto rows = score_episode_sets("x", id, ood, FilterConfig{}, 20, 0.9, 2);
  EXPECT_EQ(rows[0].id_plans, 20);
  EXPECT_EQ(rows[0].ood_plans, 20);
}
