#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "geco/baseline.hpp"
#include "geco/errors.hpp"
#include "geco/field.hpp"
#include "geco/net.hpp"
#include "geco/normalizer.hpp"
#include "geco/rng.hpp"
#include "geco/schedule.hpp"

namespace geco {

enum class Head { geco, rectified_flow };

inline const char* to_string(Head h) { return h == Head::geco ? "geco" : "rectified_flow"; }

struct TrainConfig {
  int steps = 20000;
  int batch_size = 64;
  AdamHyper adam;
  std::uint64_t seed = 0;
  Head head = Head::geco;
  DecaySchedule decay;
  double gamma_power = 1.0;
  std::vector<std::size_t> hidden_dims{256, 256, 256};
  Activation activation = Activation::tanh;
  int log_every = 100;

  void validate() const {
    if (steps < 0) throw ConfigError("train steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(gamma_power > 0.0) || !std::isfinite(gamma_power))
      throw ConfigError("gamma_power must be finite and > 0");
    decay.validate();
  }

  /// Field network for a dataset: GeCO sees (x, s); the baseline also sees gamma.
  NetworkSpec network_for(Eigen::Index chunk_dim, Eigen::Index cond_dim) const {
    NetworkSpec spec;
    spec.input_dim = static_cast<std::size_t>(chunk_dim + cond_dim) + (head == Head::geco ? 0 : 1);
    spec.output_dim = static_cast<std::size_t>(chunk_dim);
    spec.hidden_dims = hidden_dims;
    spec.activation = activation;
    spec.validate();
    return spec;
  }
};

/// Uniform sampling with replacement; the sequence is a pure function of the seed.
class BatchSampler {
 public:
  BatchSampler(std::span<const TrainingSample> dataset, int batch_size, std::uint64_t seed)
      : dataset_(dataset), batch_size_(batch_size), rng_(derive_seed(seed, Stream::batching)) {
    if (dataset_.empty()) throw ConfigError("cannot batch an empty dataset");
    if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
  }

  std::vector<std::size_t> next_indices() {
    std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size_));
    for (auto& i : idx) i = static_cast<std::size_t>(rng_.uniform_index(dataset_.size()));
    return idx;
  }

  std::vector<TrainingSample> next() {
    std::vector<TrainingSample> batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    for (std::size_t i : next_indices()) batch.push_back(dataset_[i]);
    return batch;
  }

 private:
  std::span<const TrainingSample> dataset_;
  int batch_size_;
  Rng rng_;
};

struct LogEntry {
  int step = 0;
  double loss = 0.0;  // mean minibatch loss since the previous entry
  double wall_seconds = 0.0;
};

struct TrainingLog {
  std::vector<LogEntry> entries;
  double first_loss = 0.0;  // minibatch loss at step 1
  double final_loss = 0.0;  // mean loss of the last logged window
};

struct TrainResult {
  FieldParams params;
  TrainingLog log;
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, FieldParams last_good, TrainingLog log)
      : NumericError(what), last_good_(std::move(last_good)), log_(std::move(log)) {}
  const FieldParams& last_good() const { return last_good_; }
  const TrainingLog& log() const { return log_; }

 private:
  FieldParams last_good_;
  TrainingLog log_;
};

using LogCallback = std::function<void(const LogEntry&)>;

/// Adam on the GeCO objective (head = geco) or the rectified-flow objective.
/// `dataset` must already be normalized.
inline TrainResult train(const TrainConfig& config, std::span<const TrainingSample> dataset,
                         const LogCallback& on_log = {}) {
  config.validate();
  if (dataset.empty()) throw ConfigError("cannot train on an empty dataset");
  const NetworkSpec spec =
      config.network_for(dataset.front().chunk.size(), dataset.front().condition.size());

  TrainResult result{init_network(spec, config.seed), {}};
  if (config.steps == 0) return result;

  OptimizerState opt = OptimizerState::for_params(result.params, config.adam);
  BatchSampler sampler(dataset, config.batch_size, config.seed);
  Rng noise(derive_seed(config.seed, Stream::noise));
  const auto t0 = std::chrono::steady_clock::now();

  double window_sum = 0.0;
  int window_count = 0;
  for (int step = 1; step <= config.steps; ++step) {
    const std::vector<TrainingSample> batch = sampler.next();
    LossAndGrads lg;
    try {
      lg = config.head == Head::geco ? geco_loss_and_grads(result.params, batch, config.decay, noise, config.gamma_power)
                                     : rf_loss_and_grads(result.params, batch, noise, config.gamma_power);
      if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss");
      adam_step(result.params, lg.grads, opt);
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": " + e.what(),
                             result.params, result.log);
    }
    if (step == 1) result.log.first_loss = lg.loss;
    window_sum += lg.loss;
    window_count += 1;
    if (step % config.log_every == 0 || step == config.steps) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      LogEntry entry{step, window_sum / window_count, secs};
      result.log.entries.push_back(entry);
      result.log.final_loss = entry.loss;
      if (on_log) on_log(entry);
      window_sum = 0.0;
      window_count = 0;
    }
  }
  return result;
}

}  // namespace geco
