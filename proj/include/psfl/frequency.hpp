#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "psfl/clustering.hpp"
#include "psfl/core.hpp"
#include "psfl/telemetry.hpp"

namespace psfl {

struct FrequencyConfig {
  int tau_max = 20;  // default maximum local updating frequency

  void validate() const {
    if (tau_max < 1) throw ConfigError("frequency: tau_max must be >= 1");
  }
};

// Slowest member iteration time of the cluster.
inline double slowest_iteration_time(const Cluster& cluster,
                                     const std::vector<WorkerProfile>& profiles) {
  double slowest = 0.0;
  const WorkerProfile& top = profiles[cluster.top_worker];
  for (int i : cluster.members)
    slowest = std::max(slowest, iteration_time(profiles[i], top));
  return slowest;
}

// Completion time of one aggregation round for the cluster: tau local
// iterations plus the top worker's submodel exchange with the PS.
inline double cluster_round_time(const Cluster& cluster,
                                 const std::vector<WorkerProfile>& profiles,
                                 int tau) {
  if (tau < 1) throw ContractError("cluster_round_time: tau must be >= 1");
  return tau * slowest_iteration_time(cluster, profiles) +
         profiles[cluster.top_worker].uplink_time_to_ps;
}

// Assigns per-cluster frequencies: the fastest cluster at tau_max becomes the
// reference and keeps tau_max; every other cluster takes the largest tau that
// keeps its round within twice the reference round time (the floor-ratio
// rule), bottoming out at tau = 1 for clusters that cannot meet it.
inline ClusterPlan assign_frequencies(ClusterPlan plan,
                                      const std::vector<WorkerProfile>& profiles,
                                      int tau_max) {
  FrequencyConfig{tau_max}.validate();
  if (plan.clusters.empty())
    throw ContractError("assign_frequencies: empty plan");

  int reference = 0;
  double reference_time = std::numeric_limits<double>::infinity();
  for (int c = 0; c < static_cast<int>(plan.clusters.size()); ++c) {
    const double t = cluster_round_time(plan.clusters[c], profiles, tau_max);
    if (t < reference_time) {
      reference_time = t;
      reference = c;
    }
  }

  for (int c = 0; c < static_cast<int>(plan.clusters.size()); ++c) {
    Cluster& cluster = plan.clusters[c];
    if (c == reference) {
      cluster.tau = tau_max;
      continue;
    }
    int chosen = 1;
    for (int tau = tau_max; tau >= 1; --tau) {
      if (cluster_round_time(cluster, profiles, tau) / reference_time < 2.0) {
        chosen = tau;
        break;
      }
    }
    cluster.tau = chosen;
  }
  return plan;
}

// Mean idle time of the clusters at the round barrier.
inline double inter_cluster_waiting(const ClusterPlan& plan,
                                    const std::vector<WorkerProfile>& profiles) {
  if (plan.clusters.empty()) return 0.0;
  std::vector<double> times;
  times.reserve(plan.clusters.size());
  double slowest = 0.0;
  for (const Cluster& c : plan.clusters) {
    times.push_back(cluster_round_time(c, profiles, c.tau));
    slowest = std::max(slowest, times.back());
  }
  double waiting = 0.0;
  for (double t : times) waiting += slowest - t;
  return waiting / static_cast<double>(plan.clusters.size());
}

}  // namespace psfl
