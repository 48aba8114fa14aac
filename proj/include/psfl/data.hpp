#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psfl/core.hpp"

namespace psfl {

// Categorical distribution over class labels (the V vectors).
struct LabelDistribution {
  std::vector<double> probs;

  int num_classes() const { return static_cast<int>(probs.size()); }
};

inline void check_distribution(const LabelDistribution& d) {
  double sum = 0.0;
  for (double p : d.probs) {
    if (p < 0.0) throw DataError("label distribution has a negative entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw DataError("label distribution does not sum to 1 (got " +
                    std::to_string(sum) + ")");
}

// Labeled feature vectors, row-major. Sample i lives at features[i*dim..].
struct Dataset {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> features;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  std::span<const double> sample(int i) const {
    return {features.data() + static_cast<std::size_t>(i) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }
};

// Per-worker shards of sample ids into a Dataset. Shards are disjoint and
// cover the dataset exactly.
struct PartitionedDataset {
  int num_classes = 0;
  std::vector<std::vector<int>> shards;
  LabelDistribution prior;

  int num_workers() const { return static_cast<int>(shards.size()); }
};

// Sentinel for the IID case (concentration -> infinity).
inline constexpr double kIidConcentration =
    std::numeric_limits<double>::infinity();

namespace detail {

// Class centers are a fixed function of (class id, num classes, feature dim)
// so that datasets generated with different seeds share the same geometry and
// a held-out set drawn with another seed is a valid test set. Classes sit
// evenly on a circle in the first two feature dimensions; the remaining
// dimensions carry only noise, so neighbouring classes overlap and boundary
// quality decides accuracy.
inline std::vector<double> class_center(int label, int num_classes,
                                        int feature_dim) {
  constexpr double kRingRadius = 4.0;
  const double angle = 2.0 * 3.14159265358979323846 * label / num_classes;
  std::vector<double> center(feature_dim, 0.0);
  center[0] = kRingRadius * std::cos(angle);
  center[1] = kRingRadius * std::sin(angle);
  return center;
}

}  // namespace detail

// Gaussian-blob classification data: class c is an isotropic unit-variance
// blob around a fixed class center. Samples are laid out class by class.
inline Dataset make_synthetic_dataset(int num_classes, int samples_per_class,
                                      int feature_dim, std::uint64_t seed) {
  if (num_classes < 2)
    throw ConfigError("make_synthetic_dataset: num_classes must be >= 2");
  if (samples_per_class < 1)
    throw ConfigError("make_synthetic_dataset: samples_per_class must be >= 1");
  if (feature_dim < 2)
    throw ConfigError("make_synthetic_dataset: feature_dim must be >= 2");

  Dataset ds;
  ds.num_classes = num_classes;
  ds.feature_dim = feature_dim;
  const int n = num_classes * samples_per_class;
  ds.features.resize(static_cast<std::size_t>(n) * feature_dim);
  ds.labels.resize(n);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  int row = 0;
  for (int c = 0; c < num_classes; ++c) {
    const std::vector<double> center =
        detail::class_center(c, num_classes, feature_dim);
    for (int s = 0; s < samples_per_class; ++s, ++row) {
      double* out = ds.features.data() +
                    static_cast<std::size_t>(row) * feature_dim;
      for (int d = 0; d < feature_dim; ++d) out[d] = center[d] + noise(rng);
      ds.labels[row] = c;
    }
  }
  return ds;
}

inline LabelDistribution label_distribution_of(const Dataset& ds,
                                               std::span<const int> shard) {
  if (shard.empty())
    throw DataError("label_distribution_of: empty shard");
  LabelDistribution d;
  d.probs.assign(ds.num_classes, 0.0);
  for (int id : shard) d.probs[ds.labels[id]] += 1.0;
  const double inv = 1.0 / static_cast<double>(shard.size());
  for (double& p : d.probs) p *= inv;
  return d;
}

// Dirichlet non-IID partition. Each worker draws a class mixture
// v ~ Dir(concentration * prior); samples of every class are then dealt out
// by largest-remainder so per-class totals are preserved exactly. Pass
// kIidConcentration for the IID case (every mixture equals the prior).
inline PartitionedDataset dirichlet_partition(const Dataset& ds,
                                              int num_workers,
                                              double concentration,
                                              std::uint64_t seed) {
  if (num_workers < 1)
    throw ConfigError("dirichlet_partition: num_workers must be >= 1");
  if (!(concentration > 0.0))
    throw ConfigError("dirichlet_partition: concentration must be positive");
  if (num_workers > ds.size())
    throw ConfigError("dirichlet_partition: more workers than samples");

  const int m = ds.num_classes;
  const int n = ds.size();
  const bool iid = std::isinf(concentration);

  std::vector<int> class_count(m, 0);
  for (int lab : ds.labels) ++class_count[lab];

  LabelDistribution prior;
  prior.probs.resize(m);
  for (int j = 0; j < m; ++j)
    prior.probs[j] = static_cast<double>(class_count[j]) / n;

  // Per-worker mixtures.
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> mix(num_workers,
                                       std::vector<double>(m, 0.0));
  for (int i = 0; i < num_workers; ++i) {
    if (iid) {
      mix[i] = prior.probs;
      continue;
    }
    double sum = 0.0;
    for (int j = 0; j < m; ++j) {
      const double alpha = concentration * prior.probs[j];
      if (alpha <= 0.0) continue;
      std::gamma_distribution<double> gamma(alpha, 1.0);
      mix[i][j] = gamma(rng);
      sum += mix[i][j];
    }
    if (sum <= 0.0) {
      // Degenerate draw (tiny alphas can underflow): one-hot on a seeded class.
      mix[i].assign(m, 0.0);
      mix[i][static_cast<int>(rng() % static_cast<std::uint64_t>(m))] = 1.0;
    } else {
      for (double& v : mix[i]) v /= sum;
    }
  }

  // Largest-remainder allocation of each class across workers.
  std::vector<std::vector<int>> take(num_workers, std::vector<int>(m, 0));
  for (int j = 0; j < m; ++j) {
    double col_sum = 0.0;
    for (int i = 0; i < num_workers; ++i) col_sum += mix[i][j];
    std::vector<double> weight(num_workers);
    for (int i = 0; i < num_workers; ++i)
      weight[i] = col_sum > 0.0 ? mix[i][j] / col_sum
                                : 1.0 / static_cast<double>(num_workers);

    int assigned = 0;
    std::vector<std::pair<double, int>> remainder(num_workers);
    for (int i = 0; i < num_workers; ++i) {
      const double exact = weight[i] * class_count[j];
      take[i][j] = static_cast<int>(std::floor(exact));
      assigned += take[i][j];
      remainder[i] = {exact - take[i][j], i};
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int k = 0; k < class_count[j] - assigned; ++k)
      ++take[remainder[k].second][j];
  }

  // Hand out the actual sample ids, class by class, in dataset order.
  std::vector<std::vector<int>> by_class(m);
  for (int id = 0; id < n; ++id) by_class[ds.labels[id]].push_back(id);

  PartitionedDataset part;
  part.num_classes = m;
  part.prior = prior;
  part.shards.resize(num_workers);
  for (int j = 0; j < m; ++j) {
    int next = 0;
    for (int i = 0; i < num_workers; ++i) {
      for (int k = 0; k < take[i][j]; ++k)
        part.shards[i].push_back(by_class[j][next++]);
    }
  }

  // Extreme skew can starve a worker entirely; hand such workers one sample
  // from the currently largest shard so every shard is non-empty.
  for (int i = 0; i < num_workers; ++i) {
    if (!part.shards[i].empty()) continue;
    int donor = 0;
    for (int d = 1; d < num_workers; ++d)
      if (part.shards[d].size() > part.shards[donor].size()) donor = d;
    if (part.shards[donor].size() < 2)
      throw ConfigError("dirichlet_partition: cannot give every worker a sample");
    part.shards[i].push_back(part.shards[donor].back());
    part.shards[donor].pop_back();
  }

  // Shuffle each shard so training batches are not grouped by class.
  for (int i = 0; i < num_workers; ++i) {
    std::mt19937_64 shard_rng(mix_seed(seed, 0x73687566ULL, i));
    std::shuffle(part.shards[i].begin(), part.shards[i].end(), shard_rng);
  }
  return part;
}

}  // namespace psfl
