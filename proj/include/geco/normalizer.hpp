#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "geco/errors.hpp"
#include "geco/field.hpp"
#include "geco/net.hpp"

namespace geco {

/// Per-dimension affine map of action chunks onto [-1, 1]:
/// shift = mean, scale = max |a - mean| (1 for constant dimensions).
struct Normalizer {
  Vector shift;
  Vector scale;

  Vector normalize(const Vector& raw) const {
    check(raw);
    return (raw - shift).cwiseQuotient(scale);
  }
  Vector denormalize(const Vector& normalized) const {
    check(normalized);
    return normalized.cwiseProduct(scale) + shift;
  }

  static Normalizer identity(Eigen::Index dim) {
    return {Vector::Zero(dim), Vector::Ones(dim)};
  }

 private:
  void check(const Vector& v) const {
    if (v.size() != shift.size()) throw DimensionError("normalizer dimension mismatch");
  }
};

inline Normalizer fit_normalizer(std::span<const TrainingSample> dataset) {
  if (dataset.empty()) throw ConfigError("cannot fit a normalizer on an empty dataset");
  const auto dim = dataset.front().chunk.size();
  Vector mean = Vector::Zero(dim);
  for (const TrainingSample& s : dataset) {
    if (s.chunk.size() != dim) throw DimensionError("dataset mixes chunk dimensions");
    mean += s.chunk;
  }
  mean /= static_cast<double>(dataset.size());
  Vector spread = Vector::Zero(dim);
  for (const TrainingSample& s : dataset) spread = spread.cwiseMax((s.chunk - mean).cwiseAbs());
  for (Eigen::Index i = 0; i < dim; ++i)
    if (!(spread[i] > 1e-12 * std::max(1.0, std::abs(mean[i])))) spread[i] = 1.0;
  return {mean, spread};
}

inline std::vector<TrainingSample> normalize_dataset(std::span<const TrainingSample> dataset,
                                                     const Normalizer& norm) {
  std::vector<TrainingSample> out(dataset.begin(), dataset.end());
  for (TrainingSample& s : out) s.chunk = norm.normalize(s.chunk);
  return out;
}

}  // namespace geco
