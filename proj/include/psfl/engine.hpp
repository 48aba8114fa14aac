#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <future>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "psfl/clustering.hpp"
#include "psfl/config.hpp"
#include "psfl/core.hpp"
#include "psfl/data.hpp"
#include "psfl/frequency.hpp"
#include "psfl/model.hpp"
#include "psfl/telemetry.hpp"

namespace psfl {

struct RoundMetrics {
  int round = 0;
  double sim_time = 0.0;       // this round's completion time, max_c t_c
  double intra_waiting = 0.0;  // mean over clusters of per-iteration waiting
  double inter_waiting = 0.0;  // mean idle time at the round barrier
  std::int64_t traffic_bytes = 0;
  double test_accuracy = 0.0;

  struct ClusterStat {
    int cluster_id = 0;
    int tau = 0;
    double round_time = 0.0;
    int num_members = 0;
  };
  std::vector<ClusterStat> per_cluster;
};

struct GlobalModelState {
  std::vector<double> params;
  int round = 0;
};

enum class Strategy { ParallelSfl, RandomCluster, FixedFrequency, SingleClusterSfl };

inline Strategy parse_strategy(const std::string& name) {
  if (name == "parallel-sfl") return Strategy::ParallelSfl;
  if (name == "random-cluster") return Strategy::RandomCluster;
  if (name == "fixed-frequency") return Strategy::FixedFrequency;
  if (name == "single-cluster-sfl") return Strategy::SingleClusterSfl;
  throw ConfigError("strategy: unknown strategy '" + name + "'");
}

// Next training batch for a shard, cycling past the end.
inline Batch gather_batch(const Dataset& ds, const std::vector<int>& shard,
                          std::size_t& cursor, int batch_size) {
  if (shard.empty()) throw DataError("gather_batch: empty shard");
  Batch batch;
  batch.features = Matrix(batch_size, ds.feature_dim);
  batch.labels.resize(batch_size);
  for (int r = 0; r < batch_size; ++r) {
    const int id = shard[cursor % shard.size()];
    ++cursor;
    const auto row = ds.sample(id);
    std::copy(row.begin(), row.end(), batch.features.row(r));
    batch.labels[r] = ds.labels[id];
  }
  return batch;
}

// Unweighted mean of the members' bottom submodels.
inline std::vector<double> aggregate_bottoms(
    const std::vector<std::vector<double>>& bottoms) {
  if (bottoms.empty())
    throw ContractError("aggregate_bottoms: need at least one bottom");
  const std::size_t n = bottoms.front().size();
  std::vector<double> mean(n, 0.0);
  for (const auto& b : bottoms) {
    if (b.size() != n)
      throw ShapeError("aggregate_bottoms: length mismatch");
    for (std::size_t k = 0; k < n; ++k) mean[k] += b[k];
  }
  const double inv = 1.0 / static_cast<double>(bottoms.size());
  for (double& v : mean) v *= inv;
  return mean;
}

// Cluster-weighted global aggregation with weights N_c * tau_c. Equal
// weights reduce to the plain index-ordered mean.
inline std::vector<double> global_aggregate(
    const std::vector<std::vector<double>>& models,
    const std::vector<long>& cluster_weights) {
  if (models.empty() || models.size() != cluster_weights.size())
    throw ContractError("global_aggregate: need one weight per cluster model");
  for (long w : cluster_weights)
    if (w <= 0) throw ContractError("global_aggregate: weights must be positive");
  const std::size_t n = models.front().size();
  for (const auto& m : models)
    if (m.size() != n) throw ShapeError("global_aggregate: length mismatch");

  const bool uniform = std::all_of(
      cluster_weights.begin(), cluster_weights.end(),
      [&](long w) { return w == cluster_weights.front(); });
  std::vector<double> out(n, 0.0);
  if (uniform) {
    for (const auto& m : models)
      for (std::size_t k = 0; k < n; ++k) out[k] += m[k];
    const double count = static_cast<double>(models.size());
    for (double& v : out) v /= count;
    return out;
  }
  double total = 0.0;
  for (long w : cluster_weights) total += static_cast<double>(w);
  for (std::size_t c = 0; c < models.size(); ++c) {
    const double w = static_cast<double>(cluster_weights[c]) / total;
    for (std::size_t k = 0; k < n; ++k) out[k] += w * models[c][k];
  }
  return out;
}

// Byte sizes feeding the traffic formula. All use the 4-byte wire convention.
struct TrafficSizes {
  std::int64_t smashed_bytes = 0;     // one member, one direction, one iteration
  std::int64_t bottom_bytes = 0;      // bottom submodel
  std::int64_t full_model_bytes = 0;  // spliced model
  bool count_intra_bottom = true;
};

// Round traffic: per cluster, tau_c * N_c smashed/gradient exchanges, the
// intra-cluster bottom distribute/collect, and the top worker's full-model
// exchange with the PS.
inline std::int64_t account_traffic(const ClusterPlan& plan,
                                    const TrafficSizes& sizes) {
  if (sizes.smashed_bytes < 0 || sizes.bottom_bytes < 0 ||
      sizes.full_model_bytes < 0)
    throw ContractError("account_traffic: sizes must be non-negative");
  std::int64_t bytes = 0;
  for (const Cluster& c : plan.clusters) {
    const std::int64_t members = static_cast<std::int64_t>(c.members.size());
    bytes += static_cast<std::int64_t>(c.tau) * members * 2 * sizes.smashed_bytes;
    if (sizes.count_intra_bottom) bytes += members * 2 * sizes.bottom_bytes;
    bytes += 2 * sizes.full_model_bytes;
  }
  return bytes;
}

struct ClusterRoundResult {
  std::vector<std::vector<double>> member_bottoms;
  std::vector<double> top_params;
  std::int64_t smashed_traffic_bytes = 0;
  int batches_consumed = 0;
  double last_mean_loss = 0.0;
};

// Runs tau local iterations for one cluster: every member pushes smashed
// data, the top worker updates the top submodel over all members' batches and
// returns the activation gradients, and the members update their bottoms.
// The top worker's own shard is never touched.
inline ClusterRoundResult run_cluster_round(
    const Cluster& cluster, const Dataset& ds, const PartitionedDataset& part,
    std::vector<std::size_t>& cursors, const MlpSpec& spec,
    const std::vector<double>& bottom_init, const std::vector<double>& top_init,
    int tau, double eta, int batch_size) {
  if (tau < 1) throw ContractError("run_cluster_round: tau must be >= 1");
  if (cluster.members.empty())
    throw ContractError("run_cluster_round: cluster has no members");
  for (int m : cluster.members)
    if (part.shards[m].empty())
      throw DataError("run_cluster_round: member " + std::to_string(m) +
                      " has an empty shard");

  ClusterRoundResult result;
  result.member_bottoms.assign(cluster.members.size(), bottom_init);
  result.top_params = top_init;

  for (int it = 0; it < tau; ++it) {
    std::vector<Batch> batches;
    std::vector<SmashedBatch> smashed;
    batches.reserve(cluster.members.size());
    smashed.reserve(cluster.members.size());
    for (std::size_t m = 0; m < cluster.members.size(); ++m) {
      const int worker = cluster.members[m];
      batches.push_back(
          gather_batch(ds, part.shards[worker], cursors[worker], batch_size));
      smashed.push_back(
          forward_bottom(spec, result.member_bottoms[m], batches.back()));
      result.smashed_traffic_bytes += 2 * smashed.back().byte_size;
    }
    const TopStepResult top = top_step(spec, result.top_params, smashed, eta);
    for (std::size_t m = 0; m < cluster.members.size(); ++m)
      bottom_step(spec, result.member_bottoms[m], batches[m],
                  top.activation_grads[m], eta);
    result.last_mean_loss = top.mean_loss;
    result.batches_consumed += static_cast<int>(cluster.members.size());
  }
  return result;
}

inline nlohmann::json plan_to_json(const ClusterPlan& plan) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const Cluster& c : plan.clusters)
    clusters.push_back({{"top", c.top_worker},
                        {"members", c.members},
                        {"tau", c.tau}});
  return nlohmann::json{{"round", plan.round}, {"clusters", clusters}};
}

inline constexpr const char* kMetricsHeader =
    "round,sim_time,intra_waiting,inter_waiting,traffic_bytes,test_accuracy";

inline void write_metrics_header(std::ostream& out) {
  out << kMetricsHeader << "\n";
}

inline void write_metrics_row(std::ostream& out, const RoundMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%lld,%.9g", m.round,
                m.sim_time, m.intra_waiting, m.inter_waiting,
                static_cast<long long>(m.traffic_bytes), m.test_accuracy);
  out << buf << "\n";
}

struct TrainingSinks {
  std::ostream* metrics_csv = nullptr;
  std::ostream* plans = nullptr;  // one plan JSON object per line
};

struct TrainingResult {
  std::vector<RoundMetrics> rounds;
  GlobalModelState final_model;
  nlohmann::json summary;
};

namespace detail {

inline double unit_noise(std::uint64_t seed, std::uint64_t tag,
                         std::uint64_t id) {
  const std::uint64_t bits = mix_seed(seed, tag, id);
  const double v = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
  return 2.0 * v - 1.0;
}

// Measurements for one worker in one round: the base value plus seeded
// relative jitter; link measurements agree for both endpoints of a pair.
inline RoundObservation measure_worker(const WorkerProfile& base, int round,
                                       double jitter, std::uint64_t seed) {
  auto factor = [&](std::uint64_t id) {
    return 1.0 + jitter * unit_noise(seed, seed_tag::jitter, id);
  };
  const std::uint64_t r = static_cast<std::uint64_t>(round);
  RoundObservation obs;
  obs.bottom_time =
      base.bottom_compute_time *
      factor((r << 24) | static_cast<std::uint64_t>(base.worker_id));
  obs.uplink_to_ps =
      base.uplink_time_to_ps *
      factor((r << 24) | 0x800000ULL | static_cast<std::uint64_t>(base.worker_id));
  for (const auto& [peer, t] : base.link_time) {
    const std::uint64_t lo = static_cast<std::uint64_t>(std::min(base.worker_id, peer));
    const std::uint64_t hi = static_cast<std::uint64_t>(std::max(base.worker_id, peer));
    obs.link_times[peer] = t * factor((r << 40) | (lo << 20) | hi);
  }
  return obs;
}

inline Cluster make_cluster(const std::vector<WorkerProfile>& profiles, int top,
                            std::vector<int> members, int tau) {
  Cluster c;
  c.top_worker = top;
  std::sort(members.begin(), members.end());
  c.members = std::move(members);
  c.label_mix = member_mix(profiles, c.members);
  c.tau = tau;
  return c;
}

inline ClusterPlan random_cluster_plan(const std::vector<WorkerProfile>& profiles,
                                       int tau, std::uint64_t seed) {
  const int n = static_cast<int>(profiles.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  ClusterPlan plan;
  std::size_t pos = 0;
  std::uniform_int_distribution<int> chunk(2, 8);
  while (pos < order.size()) {
    std::size_t size = static_cast<std::size_t>(chunk(rng));
    if (order.size() - pos < size + 2) size = order.size() - pos;
    std::vector<int> group(order.begin() + pos, order.begin() + pos + size);
    pos += size;
    int top = group.front();
    for (int i : group)
      if (profiles[i].ingress_bandwidth > profiles[top].ingress_bandwidth ||
          (profiles[i].ingress_bandwidth == profiles[top].ingress_bandwidth &&
           i < top))
        top = i;
    std::vector<int> members;
    for (int i : group)
      if (i != top) members.push_back(i);
    plan.clusters.push_back(make_cluster(profiles, top, std::move(members), tau));
  }
  return plan;
}

inline ClusterPlan single_cluster_plan(const std::vector<WorkerProfile>& profiles,
                                       int tau) {
  int top = 0;
  for (int i = 1; i < static_cast<int>(profiles.size()); ++i)
    if (profiles[i].ingress_bandwidth > profiles[top].ingress_bandwidth) top = i;
  std::vector<int> members;
  for (int i = 0; i < static_cast<int>(profiles.size()); ++i)
    if (i != top) members.push_back(i);
  return ClusterPlan{{make_cluster(profiles, top, std::move(members), tau)}, 0};
}

}  // namespace detail

// Full training loop: observe, plan, train per cluster, aggregate, account.
inline TrainingResult run_training(const ExperimentConfig& cfg,
                                   TrainingSinks sinks = {}) {
  validate_config(cfg);
  const Strategy strategy = parse_strategy(cfg.strategy);
  const MlpSpec spec = cfg.model.spec();
  const double flop_ratio = spec.top_bottom_flop_ratio();

  const Dataset train = make_synthetic_dataset(
      cfg.data.num_classes, cfg.data.samples_per_class, cfg.data.feature_dim,
      mix_seed(cfg.seed, seed_tag::data));
  const Dataset test = make_synthetic_dataset(
      cfg.data.num_classes, cfg.data.test_samples_per_class,
      cfg.data.feature_dim, mix_seed(cfg.seed, seed_tag::test_data));
  const PartitionedDataset part = dirichlet_partition(
      train, cfg.fleet.num_workers, cfg.data.concentration(),
      mix_seed(cfg.seed, seed_tag::partition));

  TrafficSizes sizes;
  sizes.smashed_bytes =
      static_cast<std::int64_t>(cfg.model.batch_size) * spec.split_width() * 4;
  sizes.bottom_bytes = spec.bottom_param_count() * 4;
  sizes.full_model_bytes = spec.total_param_count() * 4;
  sizes.count_intra_bottom = cfg.traffic.count_intra_bottom;

  FleetSpec fleet_spec;
  fleet_spec.num_workers = cfg.fleet.num_workers;
  fleet_spec.compute_spread = cfg.fleet.compute_spread;
  fleet_spec.base_compute_time = cfg.fleet.base_compute_time;
  fleet_spec.bandwidth_min = cfg.fleet.bandwidth_min;
  fleet_spec.bandwidth_max = cfg.fleet.bandwidth_max;
  fleet_spec.flop_ratio = flop_ratio;
  fleet_spec.link_payload_bytes = 2.0 * static_cast<double>(sizes.smashed_bytes);
  fleet_spec.uplink_payload_bytes =
      2.0 * static_cast<double>(sizes.full_model_bytes);
  std::vector<WorkerProfile> base_fleet =
      synth_fleet(fleet_spec, mix_seed(cfg.seed, seed_tag::fleet));
  for (int i = 0; i < cfg.fleet.num_workers; ++i)
    base_fleet[i].label_dist = label_distribution_of(train, part.shards[i]);

  std::vector<WorkerProfile> profiles = base_fleet;
  for (WorkerProfile& p : profiles) p.has_history = false;

  std::vector<double> global =
      init_params(spec, mix_seed(cfg.seed, seed_tag::model));
  std::vector<std::size_t> cursors(cfg.fleet.num_workers, 0);

  if (sinks.metrics_csv) write_metrics_header(*sinks.metrics_csv);

  TrainingResult result;
  for (int round = 1; round <= cfg.rounds; ++round) {
    for (int i = 0; i < cfg.fleet.num_workers; ++i)
      profiles[i] = observe_round(
          profiles[i],
          detail::measure_worker(base_fleet[i], round, cfg.telemetry.jitter,
                                 cfg.seed),
          cfg.telemetry.alpha, flop_ratio);

    ClusterPlan plan;
    UtilityWeights weights;
    weights.lambda = cfg.clustering.lambda;
    weights.per_worker_bandwidth = cfg.clustering.per_worker_bandwidth;
    weights = resolve_norms(weights, profiles);
    switch (strategy) {
      case Strategy::ParallelSfl:
      case Strategy::FixedFrequency: {
        plan = build_plan(profiles, weights, cfg.resolved_kmeans_k(),
                          mix_seed(cfg.seed, seed_tag::plan, round));
        plan = refine_plan(plan, profiles, weights, iid_reference(profiles),
                           cfg.clustering.refine_budget);
        validate_plan(plan, profiles, weights);
        if (strategy == Strategy::ParallelSfl) {
          plan = assign_frequencies(plan, profiles, cfg.frequency.tau_max);
        } else {
          for (Cluster& c : plan.clusters) c.tau = cfg.frequency.tau_max;
        }
        break;
      }
      case Strategy::RandomCluster:
        // A static random partition: the baseline never reacts to state.
        plan = detail::random_cluster_plan(
            profiles, cfg.frequency.tau_max,
            mix_seed(cfg.seed, seed_tag::random_cluster));
        break;
      case Strategy::SingleClusterSfl:
        plan = detail::single_cluster_plan(profiles, 1);
        break;
    }
    plan.round = round;

    const double eta = cfg.model.learning_rate *
                       std::pow(cfg.model.lr_decay, round - 1);
    auto [global_bottom, global_top] = split_params(spec, global);

    // Clusters are independent; run them concurrently and join in index
    // order so the reduction below is bit-stable.
    const int num_clusters = static_cast<int>(plan.clusters.size());
    std::vector<ClusterRoundResult> cluster_results(num_clusters);
    {
      const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
      std::vector<std::future<ClusterRoundResult>> futures(num_clusters);
      for (int c = 0; c < num_clusters; ++c) {
        auto task = [&, c] {
          return run_cluster_round(plan.clusters[c], train, part, cursors,
                                   spec, global_bottom, global_top,
                                   plan.clusters[c].tau, eta,
                                   cfg.model.batch_size);
        };
        futures[c] = hw > 1 ? std::async(std::launch::async, task)
                            : std::async(std::launch::deferred, task);
      }
      for (int c = 0; c < num_clusters; ++c)
        cluster_results[c] = futures[c].get();
    }

    std::vector<std::vector<double>> cluster_models;
    std::vector<long> cluster_weights;
    cluster_models.reserve(num_clusters);
    for (int c = 0; c < num_clusters; ++c) {
      const auto bottom = aggregate_bottoms(cluster_results[c].member_bottoms);
      cluster_models.push_back(
          splice(spec, bottom, cluster_results[c].top_params));
      cluster_weights.push_back(
          static_cast<long>(plan.clusters[c].members.size()) *
          plan.clusters[c].tau);
    }
    global = global_aggregate(cluster_models, cluster_weights);

    RoundMetrics metrics;
    metrics.round = round;
    double intra = 0.0;
    for (int c = 0; c < num_clusters; ++c) {
      const Cluster& cl = plan.clusters[c];
      const double t_c = cluster_round_time(cl, profiles, cl.tau);
      metrics.sim_time = std::max(metrics.sim_time, t_c);
      intra += intra_cluster_waiting(cl, profiles);
      metrics.per_cluster.push_back(
          {c, cl.tau, t_c, static_cast<int>(cl.members.size())});
    }
    metrics.intra_waiting = intra / num_clusters;
    metrics.inter_waiting = inter_cluster_waiting(plan, profiles);
    metrics.traffic_bytes = account_traffic(plan, sizes);
    metrics.test_accuracy = evaluate_accuracy(spec, global, test);

    if (sinks.metrics_csv) write_metrics_row(*sinks.metrics_csv, metrics);
    if (sinks.plans) *sinks.plans << plan_to_json(plan).dump() << "\n";
    result.rounds.push_back(std::move(metrics));
  }

  result.final_model = GlobalModelState{std::move(global), cfg.rounds};

  double total_time = 0.0, total_intra = 0.0, total_inter = 0.0;
  std::int64_t total_traffic = 0;
  for (const RoundMetrics& m : result.rounds) {
    total_time += m.sim_time;
    total_intra += m.intra_waiting;
    total_inter += m.inter_waiting;
    total_traffic += m.traffic_bytes;
  }
  result.summary = nlohmann::json{
      {"config", nlohmann::json(cfg)},
      {"seed", cfg.seed},
      {"strategy", cfg.strategy},
      {"rounds", cfg.rounds},
      {"flop_ratio", flop_ratio},
      {"final_accuracy", result.rounds.back().test_accuracy},
      {"total_sim_time", total_time},
      {"total_traffic_bytes", total_traffic},
      {"mean_intra_waiting", total_intra / cfg.rounds},
      {"mean_inter_waiting", total_inter / cfg.rounds}};
  return result;
}

}  // namespace psfl
