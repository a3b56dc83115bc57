#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "geco/normalizer.hpp"
#include "geco/trainer.hpp"

using namespace geco;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Single-mode 2-D point dataset: the chunk is a fixed affine image of the condition.
std::vector<TrainingSample> point_dataset(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingSample> out;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform(-1.0, 1.0);
    out.push_back({vec2(u, 0.0), vec2(0.6 * u, -0.3 * u + 0.2), 1});
  }
  return out;
}

TrainConfig small_config(int steps) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.hidden_dims = {32, 32};
  cfg.seed = 42;
  return cfg;
}

}  // namespace

TEST(Normalizer, TwoPointHandComputation) {
  const std::vector<TrainingSample> data{{Vector(), vec2(1, 1), 1}, {Vector(), vec2(3, 1), 1}};
  const auto n = fit_normalizer(data);
  EXPECT_EQ(n.shift, vec2(2, 1));
  EXPECT_EQ(n.scale, vec2(1, 1));
}

TEST(Normalizer, ConstantDatasetAndRoundTrip) {
  const std::vector<TrainingSample> data(4, TrainingSample{Vector(), vec2(5, -7), 1});
  const auto n = fit_normalizer(data);
  EXPECT_EQ(n.scale, vec2(1, 1));
  Rng rng(1);
  const auto fitted = fit_normalizer(point_dataset(50, 2));
  for (int i = 0; i < 100; ++i) {
    const Vector x = rng.normal_vector(2) * 10.0;
    EXPECT_LT((fitted.denormalize(fitted.normalize(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Normalizer, NormalizedDataInUnitBox) {
  const auto data = point_dataset(200, 3);
  const auto n = fit_normalizer(data);
  for (const auto& s : normalize_dataset(data, n))
    EXPECT_LE(s.chunk.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
}

TEST(Normalizer, Errors) {
  EXPECT_THROW(fit_normalizer(std::vector<TrainingSample>{}), ConfigError);
  const auto n = Normalizer::identity(2);
  EXPECT_THROW(n.normalize(Vector::Zero(3)), DimensionError);
}

TEST(BatchSampler, DeterministicPerSeed) {
  const auto data = point_dataset(30, 1);
  BatchSampler a(data, 8, 5), b(data, 8, 5), c(data, 8, 6);
  bool differs = false;
  for (int i = 0; i < 10; ++i) {
    const auto ia = a.next_indices();
    EXPECT_EQ(ia, b.next_indices());
    differs = differs || ia != c.next_indices();
  }
  EXPECT_TRUE(differs);
}

TEST(BatchSampler, SingleSampleDataset) {
  const auto data = point_dataset(1, 1);
  BatchSampler s(data, 1, 0);
  for (int i = 0; i < 5; ++i) {
    const auto batch = s.next();
    ASSERT_EQ(batch.size(), 1u);
    EXPECT_EQ(batch[0].chunk, data[0].chunk);
  }
}

TEST(BatchSampler, EmptyDatasetRejected) {
  EXPECT_THROW(BatchSampler(std::vector<TrainingSample>{}, 4, 0), ConfigError);
}

TEST(Train, ZeroStepsReturnsInitialParams) {
  const auto data = point_dataset(10, 1);
  const auto cfg = small_config(0);
  const auto res = train(cfg, data);
  EXPECT_EQ(res.params, init_network(cfg.network_for(2, 2), cfg.seed));
  EXPECT_TRUE(res.log.entries.empty());
}

TEST(Train, HeadsChooseInputWidth) {
  TrainConfig cfg = small_config(1);
  EXPECT_EQ(cfg.network_for(32, 4).input_dim, 36u);
  cfg.head = Head::rectified_flow;
  EXPECT_EQ(cfg.network_for(32, 4).input_dim, 37u);
  const auto data = point_dataset(10, 1);
  EXPECT_EQ(train(cfg, data).params.spec.input_dim, 5u);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto data = normalize_dataset(point_dataset(64, 4), fit_normalizer(point_dataset(64, 4)));
  const auto a = train(small_config(200), data);
  const auto b = train(small_config(200), data);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.log.entries.size(), b.log.entries.size());
  for (std::size_t i = 0; i < a.log.entries.size(); ++i)
    EXPECT_EQ(a.log.entries[i].loss, b.log.entries[i].loss);
}

TEST(Train, LogsEveryHundredSteps) {
  const auto data = point_dataset(20, 1);
  std::vector<int> seen;
  const auto res = train(small_config(350), data, [&](const LogEntry& e) { seen.push_back(e.step); });
  EXPECT_EQ(seen, (std::vector<int>{100, 200, 300, 350}));
  EXPECT_EQ(res.log.entries.size(), 4u);
  EXPECT_TRUE(std::isfinite(res.log.final_loss));
}

TEST(Train, SingleModeLossDropsBelowTenPercent) {
  const auto raw = point_dataset(256, 7);
  const auto data = normalize_dataset(raw, fit_normalizer(raw));
  TrainConfig cfg = small_config(5000);
  cfg.hidden_dims = {64, 64};
  cfg.decay.onset = 0.8;
  const auto res = train(cfg, data);
  // Compare against the initial network's loss on a fixed evaluation set.
  Rng rng(9);
  const auto draws = draw_noise(data, rng);
  const double initial = geco_loss(init_network(res.params.spec, cfg.seed), data, draws, cfg.decay);
  const double final = geco_loss(res.params, data, draws, cfg.decay);
  EXPECT_LT(final, 0.1 * initial);
}

TEST(Train, DivergenceReportsLastGoodParams) {
  const auto data = point_dataset(10, 1);
  TrainConfig cfg = small_config(50);
  cfg.adam.lr = 1e300;
  try {
    train(cfg, data);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.last_good().all_finite());
  }
}

TEST(Train, InvalidConfigRejected) {
  const auto data = point_dataset(10, 1);
  TrainConfig cfg = small_config(10);
  cfg.batch_size = 0;
  EXPECT_THROW(train(cfg, data), ConfigError);
  cfg = small_config(-1);
  EXPECT_THROW(train(cfg, data), ConfigError);
  EXPECT_THROW(train(small_config(1), std::vector<TrainingSample>{}), ConfigError);
}
