#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "psfl/core.hpp"
#include "psfl/data.hpp"

namespace psfl {

// Monitored state of one worker. Times are seconds per iteration, bandwidth
// is bytes per second. link_time maps peer worker id to the per-iteration
// smashed-data/gradient exchange time with that peer; uplink_time_to_ps is
// the submodel exchange time used when this worker acts as a top worker.
struct WorkerProfile {
  int worker_id = 0;
  double ingress_bandwidth = 0.0;
  LabelDistribution label_dist;
  double bottom_compute_time = 0.0;
  double top_compute_time = 0.0;
  std::map<int, double> link_time;
  double uplink_time_to_ps = 0.0;
  bool has_history = false;  // false until the first observation lands
};

struct SmoothingConfig {
  double alpha = 0.8;
};

inline double smooth_estimate(double previous, double latest, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ConfigError("smoothing alpha must lie in [0, 1]");
  if (!std::isfinite(previous) || !std::isfinite(latest))
    throw MeasurementError("smoothing inputs must be finite");
  return alpha * previous + (1.0 - alpha) * latest;
}

// One round's raw measurements for a worker.
struct RoundObservation {
  double bottom_time = 0.0;
  std::map<int, double> link_times;
  double uplink_to_ps = 0.0;
};

// Folds a round's measurements into the profile. The first observation
// initializes the estimates directly; later ones are smoothed. The top
// compute time follows the bottom one through the architecture's fixed
// flop ratio.
inline WorkerProfile observe_round(WorkerProfile profile,
                                   const RoundObservation& obs, double alpha,
                                   double flop_ratio) {
  if (!(obs.bottom_time > 0.0) || !(obs.uplink_to_ps > 0.0))
    throw MeasurementError("observe_round: measurements must be positive");
  for (const auto& [peer, t] : obs.link_times)
    if (!(t > 0.0))
      throw MeasurementError("observe_round: link measurement to worker " +
                             std::to_string(peer) + " must be positive");

  if (!profile.has_history) {
    profile.bottom_compute_time = obs.bottom_time;
    profile.uplink_time_to_ps = obs.uplink_to_ps;
    profile.link_time = obs.link_times;
  } else {
    profile.bottom_compute_time =
        smooth_estimate(profile.bottom_compute_time, obs.bottom_time, alpha);
    profile.uplink_time_to_ps =
        smooth_estimate(profile.uplink_time_to_ps, obs.uplink_to_ps, alpha);
    for (const auto& [peer, t] : obs.link_times) {
      auto it = profile.link_time.find(peer);
      if (it == profile.link_time.end())
        profile.link_time[peer] = t;
      else
        it->second = smooth_estimate(it->second, t, alpha);
    }
  }
  profile.top_compute_time = flop_ratio * profile.bottom_compute_time;
  profile.has_history = true;
  return profile;
}

// Recipe for a synthetic heterogeneous fleet.
struct FleetSpec {
  int num_workers = 0;
  double compute_spread = 10.0;     // exact max/min ratio of bottom times
  double base_compute_time = 0.05;  // geometric center, seconds/iteration
  double bandwidth_min = 125e3;     // bytes/s
  double bandwidth_max = 3.75e6;    // bytes/s
  double flop_ratio = 0.1;          // mu_p = ratio * mu_b
  double link_payload_bytes = 16384;   // per-iteration smashed exchange
  double uplink_payload_bytes = 16384; // per-round submodel exchange with PS
};

// Draws a fleet: bottom compute times log-uniform with the min/max pinned so
// max/min equals compute_spread exactly, bandwidths uniform in the given
// range, link times from the pairwise bottleneck bandwidth. Label
// distributions are left empty for the caller to fill.
inline std::vector<WorkerProfile> synth_fleet(const FleetSpec& spec,
                                              std::uint64_t seed) {
  if (spec.num_workers < 1)
    throw ConfigError("synth_fleet: num_workers must be >= 1");
  if (!(spec.compute_spread >= 1.0))
    throw ConfigError("synth_fleet: compute_spread must be >= 1");
  if (!(spec.base_compute_time > 0.0) || !(spec.bandwidth_min > 0.0) ||
      spec.bandwidth_max < spec.bandwidth_min)
    throw ConfigError("synth_fleet: invalid time/bandwidth ranges");

  const int n = spec.num_workers;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<double> expo(n);
  for (double& e : expo) e = uni(rng);
  if (n >= 2 && spec.compute_spread > 1.0) {
    // Rescale the exponents to span [0, 1] so the spread is hit exactly.
    const auto [lo, hi] = std::minmax_element(expo.begin(), expo.end());
    const double span = *hi - *lo;
    const double base = *lo;
    for (double& e : expo) e = span > 0.0 ? (e - base) / span : 0.5;
  } else {
    for (double& e : expo) e = 0.5;
  }

  std::vector<WorkerProfile> fleet(n);
  const double t_min = spec.base_compute_time / std::sqrt(spec.compute_spread);
  std::uniform_real_distribution<double> bw(spec.bandwidth_min,
                                            spec.bandwidth_max);
  for (int i = 0; i < n; ++i) {
    WorkerProfile& p = fleet[i];
    p.worker_id = i;
    p.bottom_compute_time = t_min * std::pow(spec.compute_spread, expo[i]);
    p.top_compute_time = spec.flop_ratio * p.bottom_compute_time;
    p.ingress_bandwidth = bw(rng);
    p.has_history = true;
  }
  for (int i = 0; i < n; ++i) {
    fleet[i].uplink_time_to_ps =
        spec.uplink_payload_bytes / fleet[i].ingress_bandwidth;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double bottleneck =
          std::min(fleet[i].ingress_bandwidth, fleet[j].ingress_bandwidth);
      fleet[i].link_time[j] = spec.link_payload_bytes / bottleneck;
    }
  }
  return fleet;
}

}  // namespace psfl
