#include <algorithm>
#include <catch2/catch_amalgamated.hpp>
#include <numeric>
#include <set>

#include "psfl/data.hpp"

using namespace psfl;

TEST_CASE("synthetic dataset has exact per-class counts") {
  const Dataset ds = make_synthetic_dataset(10, 100, 32, 1);
  REQUIRE(ds.size() == 1000);
  std::vector<int> counts(10, 0);
  for (int lab : ds.labels) ++counts[lab];
  for (int c : counts) CHECK(c == 100);
}

TEST_CASE("two-sample dataset has distinct labels") {
  const Dataset ds = make_synthetic_dataset(2, 1, 2, 7);
  REQUIRE(ds.size() == 2);
  CHECK(ds.labels[0] != ds.labels[1]);
}

TEST_CASE("dataset generation is deterministic") {
  const Dataset a = make_synthetic_dataset(5, 20, 8, 42);
  const Dataset b = make_synthetic_dataset(5, 20, 8, 42);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
}

TEST_CASE("dataset generation rejects invalid sizes") {
  CHECK_THROWS_AS(make_synthetic_dataset(1, 10, 8, 0), ConfigError);
  CHECK_THROWS_AS(make_synthetic_dataset(3, 0, 8, 0), ConfigError);
  CHECK_THROWS_AS(make_synthetic_dataset(3, 10, 1, 0), ConfigError);
}

TEST_CASE("label distribution of a shard") {
  Dataset ds;
  ds.num_classes = 2;
  ds.feature_dim = 2;
  ds.labels = {0, 0, 1, 1};
  ds.features.assign(8, 0.0);
  const std::vector<int> shard = {0, 1, 2, 3};
  const LabelDistribution d = label_distribution_of(ds, shard);
  CHECK(d.probs[0] == Catch::Approx(0.5));
  CHECK(d.probs[1] == Catch::Approx(0.5));
}

TEST_CASE("single-class shard distribution") {
  Dataset ds;
  ds.num_classes = 3;
  ds.feature_dim = 2;
  ds.labels = {2, 2, 2};
  ds.features.assign(6, 0.0);
  const std::vector<int> shard = {0, 1, 2};
  const LabelDistribution d = label_distribution_of(ds, shard);
  CHECK(d.probs == std::vector<double>{0.0, 0.0, 1.0});
}

TEST_CASE("concatenation of all shards recovers the prior") {
  const Dataset ds = make_synthetic_dataset(6, 40, 4, 12);
  const PartitionedDataset part = dirichlet_partition(ds, 5, 0.5, 3);
  std::vector<int> all;
  for (const auto& shard : part.shards)
    all.insert(all.end(), shard.begin(), shard.end());
  const LabelDistribution d = label_distribution_of(ds, all);
  for (int j = 0; j < 6; ++j)
    CHECK(d.probs[j] == Catch::Approx(part.prior.probs[j]).margin(1e-12));
}

TEST_CASE("empty shard is rejected") {
  Dataset ds;
  ds.num_classes = 2;
  CHECK_THROWS_AS(label_distribution_of(ds, std::vector<int>{}), DataError);
}

TEST_CASE("iid partition of a balanced dataset is balanced per shard") {
  const Dataset ds = make_synthetic_dataset(10, 100, 8, 3);
  const PartitionedDataset part =
      dirichlet_partition(ds, 4, kIidConcentration, 11);
  for (const auto& shard : part.shards) {
    std::vector<int> counts(10, 0);
    for (int id : shard) ++counts[ds.labels[id]];
    for (int c : counts) CHECK(std::abs(c - 25) <= 1);
  }
}

TEST_CASE("partition covers the dataset exactly") {
  const Dataset ds = make_synthetic_dataset(7, 61, 4, 5);
  const PartitionedDataset part = dirichlet_partition(ds, 9, 0.3, 17);
  std::set<int> seen;
  std::size_t total = 0;
  for (const auto& shard : part.shards) {
    total += shard.size();
    seen.insert(shard.begin(), shard.end());
  }
  CHECK(total == static_cast<std::size_t>(ds.size()));
  CHECK(seen.size() == static_cast<std::size_t>(ds.size()));
}

TEST_CASE("every shard distribution is normalized") {
  const Dataset ds = make_synthetic_dataset(6, 50, 4, 9);
  const PartitionedDataset part = dirichlet_partition(ds, 12, 0.1, 23);
  for (const auto& shard : part.shards) {
    REQUIRE_FALSE(shard.empty());
    CHECK_NOTHROW(check_distribution(label_distribution_of(ds, shard)));
  }
}

TEST_CASE("strong concentration skews shards toward single classes") {
  const Dataset ds = make_synthetic_dataset(10, 100, 4, 2);
  double mean_max = 0.0;
  const int draws = 100;
  for (int s = 0; s < draws; ++s) {
    const PartitionedDataset part = dirichlet_partition(ds, 10, 0.1, 100 + s);
    double acc = 0.0;
    for (const auto& shard : part.shards) {
      const LabelDistribution d = label_distribution_of(ds, shard);
      acc += *std::max_element(d.probs.begin(), d.probs.end());
    }
    mean_max += acc / part.shards.size();
  }
  CHECK(mean_max / draws > 0.5);
}

TEST_CASE("single worker receives the global prior exactly") {
  const Dataset ds = make_synthetic_dataset(4, 30, 4, 8);
  const PartitionedDataset part = dirichlet_partition(ds, 1, 0.2, 99);
  const LabelDistribution d = label_distribution_of(ds, part.shards[0]);
  for (int j = 0; j < 4; ++j)
    CHECK(d.probs[j] == Catch::Approx(part.prior.probs[j]).margin(1e-12));
}

TEST_CASE("more workers than samples is rejected") {
  const Dataset ds = make_synthetic_dataset(2, 2, 4, 1);
  CHECK_THROWS_AS(dirichlet_partition(ds, 5, 1.0, 0), ConfigError);
  CHECK_THROWS_AS(dirichlet_partition(ds, 2, -1.0, 0), ConfigError);
}

TEST_CASE("partition is deterministic") {
  const Dataset ds = make_synthetic_dataset(5, 40, 4, 6);
  const PartitionedDataset a = dirichlet_partition(ds, 7, 0.25, 31);
  const PartitionedDataset b = dirichlet_partition(ds, 7, 0.25, 31);
  CHECK(a.shards == b.shards);
}

TEST_CASE("average shard skew grows with the non-iid level") {
  const Dataset ds = make_synthetic_dataset(10, 60, 4, 4);
  const int seeds = 50;
  auto mean_max_entry = [&](double p_level) {
    double acc = 0.0;
    for (int s = 0; s < seeds; ++s) {
      const double conc = p_level == 0.0 ? kIidConcentration : 1.0 / p_level;
      const PartitionedDataset part = dirichlet_partition(ds, 8, conc, 500 + s);
      double shard_acc = 0.0;
      for (const auto& shard : part.shards) {
        const LabelDistribution d = label_distribution_of(ds, shard);
        shard_acc += *std::max_element(d.probs.begin(), d.probs.end());
      }
      acc += shard_acc / part.shards.size();
    }
    return acc / seeds;
  };
  const double at_p0 = mean_max_entry(0.0);
  const double at_p1 = mean_max_entry(1.0);
  const double at_p10 = mean_max_entry(10.0);
  CHECK(at_p0 <= at_p1);
  CHECK(at_p1 <= at_p10);
}
