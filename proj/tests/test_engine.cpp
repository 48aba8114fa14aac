#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "psfl/engine.hpp"

using namespace psfl;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.fleet.num_workers = 6;
  cfg.data.num_classes = 4;
  cfg.data.samples_per_class = 30;
  cfg.data.feature_dim = 8;
  cfg.data.test_samples_per_class = 25;
  cfg.model.layer_dims = {8, 8, 4};
  cfg.model.split_layer = 1;
  cfg.model.batch_size = 8;
  cfg.rounds = 2;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("gather_batch cycles a short shard") {
  Dataset ds;
  ds.num_classes = 2;
  ds.feature_dim = 2;
  ds.labels = {0, 1, 0};
  ds.features = {1, 1, 2, 2, 3, 3};
  const std::vector<int> shard = {2, 0};
  std::size_t cursor = 0;
  const Batch batch = gather_batch(ds, shard, cursor, 5);
  CHECK(batch.labels == std::vector<int>{0, 0, 0, 0, 0});
  CHECK(batch.features.at(0, 0) == 3.0);
  CHECK(batch.features.at(1, 0) == 1.0);
  CHECK(batch.features.at(4, 0) == 3.0);
  CHECK(cursor == 5);
  CHECK_THROWS_AS(gather_batch(ds, {}, cursor, 2), DataError);
}

TEST_CASE("bottom aggregation is the member mean") {
  CHECK(aggregate_bottoms({{1.0}, {2.0}, {3.0}}) == std::vector<double>{2.0});
  CHECK(aggregate_bottoms({{1.0, -2.0}, {-1.0, 2.0}}) ==
        std::vector<double>(2, 0.0));
  const std::vector<double> same = {0.5, 0.25};
  CHECK(aggregate_bottoms({same, same, same}) == same);
  CHECK_THROWS_AS(aggregate_bottoms({{1.0}, {1.0, 2.0}}), ShapeError);
  CHECK_THROWS_AS(aggregate_bottoms({}), ContractError);
}

TEST_CASE("uniform global aggregation reduces to the plain mean bit for bit") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> models(3, std::vector<double>(17));
  for (auto& m : models)
    for (double& v : m) v = gauss(rng);

  const auto out = global_aggregate(models, {6, 6, 6});
  // Index-ordered unweighted mean, written the obvious way.
  std::vector<double> expect(17, 0.0);
  for (const auto& m : models)
    for (std::size_t k = 0; k < m.size(); ++k) expect[k] += m[k];
  for (double& v : expect) v /= 3.0;
  CHECK(out == expect);
}

TEST_CASE("weighted aggregation matches the hand-evaluated case") {
  const auto out = global_aggregate({{1.0}, {3.0}}, {12, 12});
  CHECK(out[0] == Catch::Approx(2.0));
  const auto weighted = global_aggregate({{1.0}, {3.0}}, {3 * 4, 2 * 6});
  CHECK(weighted[0] == Catch::Approx(2.0));
}

TEST_CASE("single cluster aggregation returns the model unchanged") {
  const std::vector<double> m = {0.1, -0.7, 3.14};
  CHECK(global_aggregate({m}, {8}) == m);
}

TEST_CASE("aggregation validates its inputs") {
  CHECK_THROWS_AS(global_aggregate({}, {}), ContractError);
  CHECK_THROWS_AS(global_aggregate({{1.0}}, {0}), ContractError);
  CHECK_THROWS_AS(global_aggregate({{1.0}, {1.0, 2.0}}, {1, 1}), ShapeError);
}

TEST_CASE("aggregated parameters stay inside the cluster envelope") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> models(4, std::vector<double>(9));
  for (auto& m : models)
    for (double& v : m) v = gauss(rng);
  const auto out = global_aggregate(models, {2, 7, 3, 5});
  for (std::size_t k = 0; k < out.size(); ++k) {
    double lo = models[0][k], hi = models[0][k];
    for (const auto& m : models) {
      lo = std::min(lo, m[k]);
      hi = std::max(hi, m[k]);
    }
    CHECK(out[k] >= lo - 1e-12);
    CHECK(out[k] <= hi + 1e-12);
  }
}

TEST_CASE("traffic accounting matches the per-cluster formula") {
  TrafficSizes sizes;
  sizes.smashed_bytes = 100;
  sizes.bottom_bytes = 1000;
  sizes.full_model_bytes = 3000;

  ClusterPlan empty;
  CHECK(account_traffic(empty, sizes) == 0);

  ClusterPlan one;
  Cluster c;
  c.top_worker = 0;
  c.members = {1};
  c.tau = 1;
  one.clusters = {c};
  CHECK(account_traffic(one, sizes) == 2 * 100 + 2 * 1000 + 2 * 3000);

  // Doubling tau adds exactly tau * members * both smashed directions.
  ClusterPlan plan;
  c.members = {1, 2, 3};
  c.tau = 4;
  plan.clusters = {c};
  const auto base = account_traffic(plan, sizes);
  plan.clusters[0].tau = 8;
  CHECK(account_traffic(plan, sizes) - base == 4LL * 3 * 2 * 100);

  sizes.count_intra_bottom = false;
  plan.clusters[0].tau = 4;
  CHECK(account_traffic(plan, sizes) == base - 3LL * 2 * 1000);
}

TEST_CASE("traffic accounting is linear under randomized perturbations") {
  std::mt19937_64 rng(55);
  TrafficSizes sizes;
  sizes.smashed_bytes = 64;
  sizes.bottom_bytes = 512;
  sizes.full_model_bytes = 2048;
  for (int trial = 0; trial < 50; ++trial) {
    ClusterPlan plan;
    const int clusters = 1 + static_cast<int>(rng() % 5);
    int next_id = 0;
    for (int c = 0; c < clusters; ++c) {
      Cluster cl;
      cl.top_worker = next_id++;
      const int members = 1 + static_cast<int>(rng() % 6);
      for (int m = 0; m < members; ++m) cl.members.push_back(next_id++);
      cl.tau = 1 + static_cast<int>(rng() % 20);
      plan.clusters.push_back(cl);
    }
    const auto base = account_traffic(plan, sizes);
    const int pick = static_cast<int>(rng() % clusters);
    plan.clusters[pick].tau += 1;
    const auto bumped = account_traffic(plan, sizes);
    CHECK(bumped - base ==
          static_cast<std::int64_t>(plan.clusters[pick].members.size()) * 2 *
              sizes.smashed_bytes);
  }
}

TEST_CASE("cluster round rejects bad inputs") {
  const Dataset ds = make_synthetic_dataset(4, 20, 8, 1);
  PartitionedDataset part = dirichlet_partition(ds, 4, kIidConcentration, 2);
  MlpSpec spec{{8, 6, 4}, 1};
  const auto model = init_split_model(spec, 3);
  std::vector<std::size_t> cursors(4, 0);
  Cluster c;
  c.top_worker = 0;
  c.members = {1, 2};
  CHECK_THROWS_AS(run_cluster_round(c, ds, part, cursors, spec,
                                    model.bottom_params, model.top_params, 0,
                                    0.1, 8),
                  ContractError);
  part.shards[1].clear();
  CHECK_THROWS_AS(run_cluster_round(c, ds, part, cursors, spec,
                                    model.bottom_params, model.top_params, 2,
                                    0.1, 8),
                  DataError);
}

TEST_CASE("members with identical shards produce identical bottoms") {
  const Dataset ds = make_synthetic_dataset(4, 20, 8, 7);
  PartitionedDataset part = dirichlet_partition(ds, 4, kIidConcentration, 9);
  part.shards[2] = part.shards[1];  // duplicate data for two members
  MlpSpec spec{{8, 6, 4}, 1};
  const auto model = init_split_model(spec, 11);
  std::vector<std::size_t> cursors(4, 0);
  Cluster c;
  c.top_worker = 0;
  c.members = {1, 2};
  const auto result = run_cluster_round(c, ds, part, cursors, spec,
                                        model.bottom_params, model.top_params,
                                        3, 0.1, 8);
  CHECK(result.member_bottoms[0] == result.member_bottoms[1]);
  CHECK(cursors[0] == 0);  // the top worker's shard is untouched
  CHECK(cursors[1] == cursors[2]);
}

TEST_CASE("single-member cluster equals monolithic training") {
  const Dataset ds = make_synthetic_dataset(4, 30, 8, 13);
  const PartitionedDataset part = dirichlet_partition(ds, 2, kIidConcentration, 1);
  MlpSpec spec{{8, 6, 4}, 1};
  const auto model = init_split_model(spec, 21);
  std::vector<std::size_t> cursors(2, 0);
  Cluster c;
  c.top_worker = 0;
  c.members = {1};
  const int tau = 5;
  const double eta = 0.05;
  const auto result =
      run_cluster_round(c, ds, part, cursors, spec, model.bottom_params,
                        model.top_params, tau, eta, 8);

  auto mono = splice(spec, model.bottom_params, model.top_params);
  std::size_t cursor = 0;
  for (int it = 0; it < tau; ++it) {
    const Batch batch = gather_batch(ds, part.shards[1], cursor, 8);
    full_step(spec, mono, batch, eta);
  }
  const auto spliced = splice(spec, aggregate_bottoms(result.member_bottoms),
                              result.top_params);
  for (std::size_t k = 0; k < mono.size(); ++k)
    CHECK(spliced[k] == Catch::Approx(mono[k]).margin(1e-9));
}

TEST_CASE("training smoke run yields one metrics row per round") {
  ExperimentConfig cfg = tiny_config();
  cfg.fleet.num_workers = 2;
  cfg.rounds = 1;
  const TrainingResult result = run_training(cfg);
  REQUIRE(result.rounds.size() == 1);
  CHECK(std::isfinite(result.rounds[0].test_accuracy));
  CHECK(result.rounds[0].traffic_bytes > 0);
  CHECK(result.rounds[0].sim_time > 0.0);
}

TEST_CASE("training is deterministic across runs") {
  for (const char* strategy :
       {"parallel-sfl", "random-cluster", "fixed-frequency",
        "single-cluster-sfl"}) {
    ExperimentConfig cfg = tiny_config();
    cfg.strategy = strategy;
    std::ostringstream csv_a, csv_b;
    TrainingSinks sinks_a{&csv_a, nullptr}, sinks_b{&csv_b, nullptr};
    run_training(cfg, sinks_a);
    run_training(cfg, sinks_b);
    CHECK(csv_a.str() == csv_b.str());
  }
}

TEST_CASE("zero learning rate leaves the model untouched") {
  ExperimentConfig cfg = tiny_config();
  cfg.model.learning_rate = 0.0;
  cfg.rounds = 1;
  const auto one = run_training(cfg);
  cfg.rounds = 4;
  const auto four = run_training(cfg);
  REQUIRE(one.final_model.params.size() == four.final_model.params.size());
  for (std::size_t k = 0; k < one.final_model.params.size(); ++k)
    CHECK(four.final_model.params[k] ==
          Catch::Approx(one.final_model.params[k]).margin(1e-12));
  for (const auto& m : four.rounds)
    CHECK(m.test_accuracy == four.rounds.front().test_accuracy);
}

TEST_CASE("round time equals the slowest cluster round time") {
  ExperimentConfig cfg = tiny_config();
  cfg.rounds = 3;
  const auto result = run_training(cfg);
  for (const auto& m : result.rounds) {
    REQUIRE_FALSE(m.per_cluster.empty());
    double slowest = 0.0;
    for (const auto& c : m.per_cluster)
      slowest = std::max(slowest, c.round_time);
    CHECK(m.sim_time == Catch::Approx(slowest));
    for (const auto& c : m.per_cluster) CHECK(c.tau >= 1);
  }
}

TEST_CASE("single-cluster strategy reproduces hand-rolled splitfed") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy = "single-cluster-sfl";
  cfg.rounds = 3;
  const auto result = run_training(cfg);

  // Replay: same data, same fleet-derived top selection, tau = 1.
  const MlpSpec spec = cfg.model.spec();
  const Dataset train = make_synthetic_dataset(
      cfg.data.num_classes, cfg.data.samples_per_class, cfg.data.feature_dim,
      mix_seed(cfg.seed, seed_tag::data));
  const PartitionedDataset part = dirichlet_partition(
      train, cfg.fleet.num_workers, kIidConcentration,
      mix_seed(cfg.seed, seed_tag::partition));
  FleetSpec fs;
  fs.num_workers = cfg.fleet.num_workers;
  fs.compute_spread = cfg.fleet.compute_spread;
  fs.base_compute_time = cfg.fleet.base_compute_time;
  fs.bandwidth_min = cfg.fleet.bandwidth_min;
  fs.bandwidth_max = cfg.fleet.bandwidth_max;
  fs.flop_ratio = spec.top_bottom_flop_ratio();
  fs.link_payload_bytes =
      2.0 * cfg.model.batch_size * spec.split_width() * 4.0;
  fs.uplink_payload_bytes = 2.0 * spec.total_param_count() * 4.0;
  const auto fleet = synth_fleet(fs, mix_seed(cfg.seed, seed_tag::fleet));
  int top = 0;
  for (int i = 1; i < cfg.fleet.num_workers; ++i)
    if (fleet[i].ingress_bandwidth > fleet[top].ingress_bandwidth) top = i;

  auto global = init_params(spec, mix_seed(cfg.seed, seed_tag::model));
  std::vector<std::size_t> cursors(cfg.fleet.num_workers, 0);
  for (int round = 1; round <= cfg.rounds; ++round) {
    const double eta =
        cfg.model.learning_rate * std::pow(cfg.model.lr_decay, round - 1);
    auto [bottom, top_params] = split_params(spec, global);
    std::vector<std::vector<double>> bottoms;
    std::vector<Batch> batches;
    std::vector<SmashedBatch> smashed;
    for (int i = 0; i < cfg.fleet.num_workers; ++i) {
      if (i == top) continue;
      bottoms.push_back(bottom);
      batches.push_back(
          gather_batch(train, part.shards[i], cursors[i], cfg.model.batch_size));
      smashed.push_back(forward_bottom(spec, bottoms.back(), batches.back()));
    }
    const auto step = top_step(spec, top_params, smashed, eta);
    for (std::size_t m = 0; m < bottoms.size(); ++m)
      bottom_step(spec, bottoms[m], batches[m], step.activation_grads[m], eta);
    global = splice(spec, aggregate_bottoms(bottoms), top_params);
  }
  REQUIRE(result.final_model.params.size() == global.size());
  for (std::size_t k = 0; k < global.size(); ++k)
    CHECK(result.final_model.params[k] ==
          Catch::Approx(global[k]).margin(1e-12));
}

TEST_CASE("iid training on the default config beats chance") {
  ExperimentConfig cfg;  // spec defaults: 40 workers, 10 classes, IID
  cfg.rounds = 30;
  const auto result = run_training(cfg);
  CHECK(result.rounds.back().test_accuracy > 0.1);
}

TEST_CASE("summary embeds the resolved config and seed") {
  ExperimentConfig cfg = tiny_config();
  const auto result = run_training(cfg);
  REQUIRE(result.summary.contains("config"));
  CHECK(result.summary["seed"].get<std::uint64_t>() == cfg.seed);
  const ExperimentConfig round_trip =
      result.summary["config"].get<ExperimentConfig>();
  CHECK(round_trip == cfg);
  CHECK(result.summary["final_accuracy"].get<double>() ==
        Catch::Approx(result.rounds.back().test_accuracy));
}

TEST_CASE("jittered telemetry keeps runs deterministic") {
  ExperimentConfig cfg = tiny_config();
  cfg.telemetry.jitter = 0.1;
  cfg.rounds = 3;
  std::ostringstream a, b;
  TrainingSinks sa{&a, nullptr}, sb{&b, nullptr};
  run_training(cfg, sa);
  run_training(cfg, sb);
  CHECK(a.str() == b.str());
  CHECK(a.str().find("nan") == std::string::npos);
}
