#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "psfl/core.hpp"
#include "psfl/data.hpp"
#include "psfl/telemetry.hpp"

namespace psfl {

// One cluster: a designated top worker plus the bottom workers training on
// their own shards. label_mix is the members' mean label distribution; the
// top worker's data is excluded by construction.
struct Cluster {
  int top_worker = -1;
  std::vector<int> members;
  LabelDistribution label_mix;
  int tau = 1;
};

struct ClusterPlan {
  std::vector<Cluster> clusters;
  int round = 0;
};

struct UtilityWeights {
  double lambda = 0.5;              // waiting-vs-KL trade-off
  double per_worker_bandwidth = 0;  // b, bytes/s occupied per member
  double waiting_norm = 1.0;
  double kl_norm = 1.0;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw ConfigError("utility: lambda must lie in [0, 1]");
    if (!(per_worker_bandwidth > 0.0))
      throw ConfigError("utility: per-worker bandwidth must be positive");
    if (!(waiting_norm > 0.0) || !(kl_norm > 0.0))
      throw ConfigError("utility: normalization constants must be positive");
  }
};

inline constexpr double kKlSmoothing = 1e-9;

// KL(p || q) with natural log. Both arguments are additively smoothed and
// renormalized so one-hot distributions never produce infinities.
inline double kl_divergence(const LabelDistribution& p,
                            const LabelDistribution& q) {
  if (p.probs.size() != q.probs.size())
    throw ShapeError("kl_divergence: distributions have different lengths");
  const int m = static_cast<int>(p.probs.size());
  const double z = 1.0 + m * kKlSmoothing;
  double kl = 0.0;
  for (int j = 0; j < m; ++j) {
    const double pj = (p.probs[j] + kKlSmoothing) / z;
    const double qj = (q.probs[j] + kKlSmoothing) / z;
    kl += pj * std::log(pj / qj);
  }
  return std::max(kl, 0.0);
}

// The IID reference: blanket mean of all workers' label distributions.
inline LabelDistribution iid_reference(
    const std::vector<WorkerProfile>& profiles) {
  if (profiles.empty())
    throw ContractError("iid_reference: need at least one profile");
  const int m = profiles.front().label_dist.num_classes();
  LabelDistribution ref;
  ref.probs.assign(m, 0.0);
  for (const WorkerProfile& p : profiles) {
    if (p.label_dist.num_classes() != m)
      throw ShapeError("iid_reference: label distributions differ in length");
    for (int j = 0; j < m; ++j) ref.probs[j] += p.label_dist.probs[j];
  }
  for (double& v : ref.probs) v /= static_cast<double>(profiles.size());
  return ref;
}

// Completion time of one local iteration for a member under a given top.
inline double iteration_time(const WorkerProfile& member,
                             const WorkerProfile& top) {
  auto it = member.link_time.find(top.worker_id);
  if (it == member.link_time.end())
    throw ProfileError("iteration_time: no link estimate from worker " +
                       std::to_string(member.worker_id) + " to " +
                       std::to_string(top.worker_id));
  return member.bottom_compute_time + it->second + top.top_compute_time;
}

// Mean per-iteration idle time of the cluster's members.
inline double intra_cluster_waiting(const Cluster& cluster,
                                    const std::vector<WorkerProfile>& profiles) {
  if (cluster.members.empty()) return 0.0;
  const WorkerProfile& top = profiles[cluster.top_worker];
  double slowest = 0.0;
  std::vector<double> times;
  times.reserve(cluster.members.size());
  for (int i : cluster.members) {
    times.push_back(iteration_time(profiles[i], top));
    slowest = std::max(slowest, times.back());
  }
  double waiting = 0.0;
  for (double t : times) waiting += slowest - t;
  return waiting / static_cast<double>(cluster.members.size());
}

struct FeasibilityReport {
  bool ok = true;
  std::vector<std::string> violations;
};

// Checks the two cluster constraints: the members' occupied bandwidth must
// fit the top's ingress bandwidth, and the top must be able to serve every
// member within one member iteration.
inline FeasibilityReport feasible(const Cluster& cluster,
                                  const std::vector<WorkerProfile>& profiles,
                                  const UtilityWeights& weights) {
  FeasibilityReport report;
  const WorkerProfile& top = profiles[cluster.top_worker];
  const double n = static_cast<double>(cluster.members.size());
  if (n * weights.per_worker_bandwidth > top.ingress_bandwidth) {
    report.ok = false;
    report.violations.push_back("bandwidth-cap");
  }
  double slowest_feed = 0.0;
  for (int i : cluster.members) {
    auto it = profiles[i].link_time.find(top.worker_id);
    if (it == profiles[i].link_time.end())
      throw ProfileError("feasible: missing link estimate");
    slowest_feed =
        std::max(slowest_feed, profiles[i].bottom_compute_time + it->second);
  }
  if (n * top.top_compute_time > slowest_feed) {
    report.ok = false;
    report.violations.push_back("top-compute-cap");
  }
  return report;
}

inline double cluster_utility(const Cluster& cluster,
                              const std::vector<WorkerProfile>& profiles,
                              const UtilityWeights& weights,
                              const LabelDistribution& iid_ref) {
  const double waiting = intra_cluster_waiting(cluster, profiles);
  const double kl = kl_divergence(cluster.label_mix, iid_ref);
  return weights.lambda * (waiting / weights.waiting_norm) +
         (1.0 - weights.lambda) * (kl / weights.kl_norm);
}

inline LabelDistribution member_mix(const std::vector<WorkerProfile>& profiles,
                                    const std::vector<int>& members) {
  if (members.empty())
    throw ContractError("member_mix: cluster has no members");
  const int m = profiles[members.front()].label_dist.num_classes();
  LabelDistribution mix;
  mix.probs.assign(m, 0.0);
  for (int i : members)
    for (int j = 0; j < m; ++j) mix.probs[j] += profiles[i].label_dist.probs[j];
  for (double& v : mix.probs) v /= static_cast<double>(members.size());
  return mix;
}

// Fills the per-round normalization constants: the observed spread of
// iteration times over all (member, top) pairings, and ln M for the KL term.
inline UtilityWeights resolve_norms(UtilityWeights weights,
                                    const std::vector<WorkerProfile>& profiles) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const WorkerProfile& member : profiles) {
    for (const WorkerProfile& top : profiles) {
      if (member.worker_id == top.worker_id) continue;
      const double t = iteration_time(member, top);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  weights.waiting_norm = (hi > lo && std::isfinite(lo)) ? hi - lo : 1.0;
  const int m = profiles.front().label_dist.num_classes();
  weights.kl_norm = std::max(std::log(static_cast<double>(m)), 1e-9);
  return weights;
}

namespace detail {

inline double symmetric_kl(const LabelDistribution& a,
                           const LabelDistribution& b) {
  return 0.5 * (kl_divergence(a, b) + kl_divergence(b, a));
}

}  // namespace detail

// K-means on label distributions with a symmetrized KL distance and
// arithmetic-mean centroids. Groups are never empty; ties and seeding are
// deterministic for a fixed seed.
inline std::vector<std::vector<int>> kmeans_label_groups(
    const std::vector<WorkerProfile>& profiles, int k, std::uint64_t seed) {
  const int n = static_cast<int>(profiles.size());
  if (k < 1 || k > n)
    throw ConfigError("kmeans: K must lie in [1, num_workers]");

  if (k == n) {
    std::vector<std::vector<int>> singletons(n);
    for (int i = 0; i < n; ++i) singletons[i] = {i};
    return singletons;
  }

  std::mt19937_64 rng(seed);
  std::vector<LabelDistribution> centroids;
  centroids.reserve(k);

  // k-means++ style seeding on the symmetrized KL distance.
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.push_back(profiles[first(rng)].label_dist);
  std::vector<double> dist(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids)
        d = std::min(d, detail::symmetric_kl(profiles[i].label_dist, c));
      dist[i] = d;
      total += d;
    }
    int pick = -1;
    if (total <= 0.0) {
      // All points coincide with a centroid; any remaining point works.
      pick = static_cast<int>(rng() % static_cast<std::uint64_t>(n));
    } else {
      std::uniform_real_distribution<double> uni(0.0, total);
      double r = uni(rng);
      for (int i = 0; i < n; ++i) {
        r -= dist[i];
        if (r <= 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) pick = n - 1;
    }
    centroids.push_back(profiles[pick].label_dist);
  }

  std::vector<int> assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = assign[i];
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = detail::symmetric_kl(profiles[i].label_dist, centroids[c]);
        if (d < best_d - 1e-15) {
          best_d = d;
          best = c;
        }
      }
      if (best != assign[i]) {
        assign[i] = best;
        changed = true;
      }
    }

    // Repair empty groups by stealing the point farthest from its centroid.
    for (int c = 0; c < k; ++c) {
      if (std::count(assign.begin(), assign.end(), c) > 0) continue;
      int worst = -1;
      double worst_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (std::count(assign.begin(), assign.end(), assign[i]) < 2) continue;
        const double d =
            detail::symmetric_kl(profiles[i].label_dist, centroids[assign[i]]);
        if (d > worst_d) {
          worst_d = d;
          worst = i;
        }
      }
      if (worst >= 0) {
        assign[worst] = c;
        changed = true;
      }
    }

    const int m = profiles.front().label_dist.num_classes();
    for (int c = 0; c < k; ++c) {
      LabelDistribution mean;
      mean.probs.assign(m, 0.0);
      int count = 0;
      for (int i = 0; i < n; ++i) {
        if (assign[i] != c) continue;
        for (int j = 0; j < m; ++j) mean.probs[j] += profiles[i].label_dist.probs[j];
        ++count;
      }
      if (count > 0) {
        for (double& v : mean.probs) v /= count;
        centroids[c] = std::move(mean);
      }
    }
    if (!changed) break;
  }

  std::vector<std::vector<int>> groups(k);
  for (int i = 0; i < n; ++i) groups[assign[i]].push_back(i);
  return groups;
}

namespace detail {

// Feasibility of adding one more member to (top, members).
inline bool addition_feasible(const std::vector<WorkerProfile>& profiles,
                              const UtilityWeights& weights, int top,
                              const std::vector<int>& members, int candidate) {
  const WorkerProfile& t = profiles[top];
  const double n = static_cast<double>(members.size()) + 1.0;
  if (n * weights.per_worker_bandwidth > t.ingress_bandwidth) return false;
  double slowest_feed = 0.0;
  auto feed = [&](int i) {
    auto it = profiles[i].link_time.find(top);
    if (it == profiles[i].link_time.end())
      throw ProfileError("build_plan: missing link estimate");
    return profiles[i].bottom_compute_time + it->second;
  };
  for (int i : members) slowest_feed = std::max(slowest_feed, feed(i));
  slowest_feed = std::max(slowest_feed, feed(candidate));
  return n * t.top_compute_time <= slowest_feed;
}

}  // namespace detail

// Greedy plan construction. Workers are first grouped by label similarity;
// each cluster then takes the highest-bandwidth worker of the largest
// remaining group as its top and greedily absorbs, from a slowest-first
// per-group candidate frontier, the feasible worker whose addition keeps the
// members' mixture closest to the IID reference. A cluster closes when no
// feasible addition helps the KL term; a final leftover worker is attached
// to the feasible cluster whose top has the most bandwidth headroom.
inline ClusterPlan build_plan(const std::vector<WorkerProfile>& profiles,
                              const UtilityWeights& weights, int k,
                              std::uint64_t seed) {
  const int n = static_cast<int>(profiles.size());
  if (n < 2)
    throw ContractError("build_plan: need at least two workers");
  for (int i = 0; i < n; ++i)
    if (profiles[i].worker_id != i)
      throw ProfileError("build_plan: profiles must be indexed by worker id");
  weights.validate();

  const LabelDistribution iid_ref = iid_reference(profiles);
  const auto groups = kmeans_label_groups(profiles, k, seed);

  std::vector<bool> assigned(n, false);
  std::vector<bool> blocked_top(n, false);
  int unassigned = n;
  ClusterPlan plan;

  auto group_unassigned = [&](const std::vector<int>& g) {
    int c = 0;
    for (int i : g)
      if (!assigned[i]) ++c;
    return c;
  };

  while (unassigned >= 2) {
    // Top selection: max-bandwidth unblocked worker of the largest group.
    int top = -1;
    {
      int best_group = -1, best_count = 0;
      for (int g = 0; g < static_cast<int>(groups.size()); ++g) {
        const int count = group_unassigned(groups[g]);
        if (count > best_count) {
          best_count = count;
          best_group = g;
        }
      }
      auto pick_top = [&](const std::vector<int>& g) {
        int best = -1;
        for (int i : g) {
          if (assigned[i] || blocked_top[i]) continue;
          if (best < 0 ||
              profiles[i].ingress_bandwidth > profiles[best].ingress_bandwidth)
            best = i;
        }
        return best;
      };
      top = pick_top(groups[best_group]);
      if (top < 0) {
        // Largest group exhausted of viable tops; fall back to any group.
        for (const auto& g : groups) {
          top = pick_top(g);
          if (top >= 0) break;
        }
      }
      if (top < 0)
        throw PlanningError(
            "build_plan: no remaining worker can host a feasible cluster");
    }
    assigned[top] = true;
    --unassigned;

    // Per-group candidate lists, slowest iteration time first.
    std::vector<std::vector<int>> queue(groups.size());
    std::vector<std::size_t> cursor(groups.size(), 0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (int i : groups[g])
        if (!assigned[i]) queue[g].push_back(i);
      std::sort(queue[g].begin(), queue[g].end(), [&](int a, int b) {
        const double ta = iteration_time(profiles[a], profiles[top]);
        const double tb = iteration_time(profiles[b], profiles[top]);
        if (ta != tb) return ta > tb;
        return a < b;
      });
    }
    std::set<int> frontier;
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (cursor[g] < queue[g].size()) frontier.insert(queue[g][cursor[g]++]);

    std::vector<int> members;
    double current_kl = std::numeric_limits<double>::infinity();
    while (true) {
      int best = -1;
      double best_kl = std::numeric_limits<double>::infinity();
      for (int cand : frontier) {
        if (!detail::addition_feasible(profiles, weights, top, members, cand))
          continue;
        std::vector<int> trial = members;
        trial.push_back(cand);
        const double kl = kl_divergence(member_mix(profiles, trial), iid_ref);
        if (kl < best_kl - 1e-15 || (kl < best_kl + 1e-15 && cand < best)) {
          best_kl = kl;
          best = cand;
        }
      }
      if (best < 0) {
        // Nothing feasible on the frontier; widen it with the next-slowest
        // candidate of every group, or give up when all are exposed.
        bool widened = false;
        for (std::size_t g = 0; g < groups.size(); ++g) {
          while (cursor[g] < queue[g].size()) {
            const int next = queue[g][cursor[g]++];
            if (!assigned[next]) {
              frontier.insert(next);
              widened = true;
              break;
            }
          }
        }
        if (!widened) break;
        continue;
      }
      if (!members.empty() && best_kl > current_kl + 1e-12) break;

      members.push_back(best);
      assigned[best] = true;
      --unassigned;
      frontier.erase(best);
      current_kl = best_kl;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        if (std::find(groups[g].begin(), groups[g].end(), best) ==
            groups[g].end())
          continue;
        while (cursor[g] < queue[g].size()) {
          const int next = queue[g][cursor[g]++];
          if (!assigned[next]) {
            frontier.insert(next);
            break;
          }
        }
        break;
      }
    }

    if (members.empty()) {
      // This top cannot host anyone; put it back and try the next one.
      assigned[top] = false;
      ++unassigned;
      blocked_top[top] = true;
      continue;
    }
    std::sort(members.begin(), members.end());
    Cluster cluster;
    cluster.top_worker = top;
    cluster.members = std::move(members);
    cluster.label_mix = member_mix(profiles, cluster.members);
    plan.clusters.push_back(std::move(cluster));
    std::fill(blocked_top.begin(), blocked_top.end(), false);
  }

  if (unassigned == 1) {
    int leftover = -1;
    for (int i = 0; i < n; ++i)
      if (!assigned[i]) leftover = i;

    // Attach to the feasible cluster whose top has the most bandwidth slack.
    int best_cluster = -1;
    double best_slack = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(plan.clusters.size()); ++c) {
      const Cluster& cl = plan.clusters[c];
      if (!detail::addition_feasible(profiles, weights, cl.top_worker,
                                     cl.members, leftover))
        continue;
      const double slack =
          profiles[cl.top_worker].ingress_bandwidth -
          (static_cast<double>(cl.members.size()) + 1.0) *
              weights.per_worker_bandwidth;
      if (slack > best_slack) {
        best_slack = slack;
        best_cluster = c;
      }
    }
    if (best_cluster >= 0) {
      Cluster& cl = plan.clusters[best_cluster];
      cl.members.push_back(leftover);
      std::sort(cl.members.begin(), cl.members.end());
      cl.label_mix = member_mix(profiles, cl.members);
    } else {
      // Pair the leftover with a member stolen from the largest cluster that
      // can spare one, in whichever role is feasible.
      bool placed = false;
      std::vector<int> order(plan.clusters.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return plan.clusters[a].members.size() > plan.clusters[b].members.size();
      });
      for (int c : order) {
        Cluster& cl = plan.clusters[c];
        if (cl.members.size() < 2) continue;
        for (std::size_t mi = 0; mi < cl.members.size() && !placed; ++mi) {
          const int m = cl.members[mi];
          // Removing m can tighten the donor's top-compute constraint.
          Cluster donor = cl;
          donor.members.erase(donor.members.begin() + mi);
          donor.label_mix = member_mix(profiles, donor.members);
          if (!feasible(donor, profiles, weights).ok) continue;
          for (auto [t, mem] : {std::pair{leftover, m}, std::pair{m, leftover}}) {
            if (!detail::addition_feasible(profiles, weights, t, {}, mem))
              continue;
            cl = donor;
            Cluster fresh;
            fresh.top_worker = t;
            fresh.members = {mem};
            fresh.label_mix = member_mix(profiles, fresh.members);
            plan.clusters.push_back(std::move(fresh));
            placed = true;
            break;
          }
        }
        if (placed) break;
      }
      if (!placed)
        throw PlanningError("build_plan: leftover worker " +
                            std::to_string(leftover) +
                            " fits no feasible cluster");
    }
  }
  return plan;
}

// Total plan utility under fixed weights.
inline double plan_utility(const ClusterPlan& plan,
                           const std::vector<WorkerProfile>& profiles,
                           const UtilityWeights& weights,
                           const LabelDistribution& iid_ref) {
  double u = 0.0;
  for (const Cluster& c : plan.clusters)
    u += cluster_utility(c, profiles, weights, iid_ref);
  return u;
}

// Local search over single-member moves and pairwise member swaps. A change
// is applied only when it strictly lowers the summed utility and keeps every
// touched cluster feasible and non-empty. Strictly-decreasing descent paths
// are explored depth-first with the best step first, so the search escapes
// inferior branches of the descent graph instead of committing to one
// trajectory. `budget` caps the number of candidate evaluations.
inline ClusterPlan refine_plan(ClusterPlan plan,
                               const std::vector<WorkerProfile>& profiles,
                               const UtilityWeights& weights,
                               const LabelDistribution& iid_ref, long budget) {
  weights.validate();
  const int nc = static_cast<int>(plan.clusters.size());
  if (nc < 2 || budget <= 0) return plan;

  auto rebuild = [&](Cluster c, std::vector<int> members) {
    c.members = std::move(members);
    std::sort(c.members.begin(), c.members.end());
    c.label_mix = member_mix(profiles, c.members);
    return c;
  };
  auto plan_key = [](const ClusterPlan& p) {
    std::string key;
    for (const Cluster& c : p.clusters) {
      for (int m : c.members) key += std::to_string(m) + ",";
      key += ";";
    }
    return key;
  };
  auto total_utility = [&](const ClusterPlan& p) {
    return plan_utility(p, profiles, weights, iid_ref);
  };

  long evals = 0;

  // All strictly-improving feasible successors, best first.
  auto successors = [&](const ClusterPlan& cur, double cur_util) {
    std::vector<std::pair<double, ClusterPlan>> out;
    std::vector<double> util(nc);
    for (int c = 0; c < nc; ++c)
      util[c] = cluster_utility(cur.clusters[c], profiles, weights, iid_ref);

    for (int a = 0; a < nc && evals < budget; ++a) {
      const Cluster& ca = cur.clusters[a];
      for (std::size_t ai = 0; ai < ca.members.size() && evals < budget; ++ai) {
        // Moves: member ai of cluster a joins cluster b.
        if (ca.members.size() >= 2) {
          for (int b = 0; b < nc && evals < budget; ++b) {
            if (b == a) continue;
            const Cluster& cb = cur.clusters[b];
            ++evals;
            if (!detail::addition_feasible(profiles, weights, cb.top_worker,
                                           cb.members, ca.members[ai]))
              continue;
            std::vector<int> ma = ca.members;
            ma.erase(ma.begin() + ai);
            std::vector<int> mb = cb.members;
            mb.push_back(ca.members[ai]);
            Cluster ta = rebuild(ca, std::move(ma));
            if (!feasible(ta, profiles, weights).ok) continue;
            Cluster tb = rebuild(cb, std::move(mb));
            const double delta =
                (cluster_utility(ta, profiles, weights, iid_ref) +
                 cluster_utility(tb, profiles, weights, iid_ref)) -
                (util[a] + util[b]);
            if (delta < -1e-12) {
              ClusterPlan next = cur;
              next.clusters[a] = std::move(ta);
              next.clusters[b] = std::move(tb);
              out.emplace_back(cur_util + delta, std::move(next));
            }
          }
        }
        // Swaps: member ai of cluster a exchanges with member bi of b.
        for (int b = a + 1; b < nc && evals < budget; ++b) {
          const Cluster& cb = cur.clusters[b];
          for (std::size_t bi = 0; bi < cb.members.size() && evals < budget;
               ++bi) {
            ++evals;
            std::vector<int> ma = ca.members;
            std::vector<int> mb = cb.members;
            std::swap(ma[ai], mb[bi]);
            Cluster ta = rebuild(ca, std::move(ma));
            Cluster tb = rebuild(cb, std::move(mb));
            if (!feasible(ta, profiles, weights).ok ||
                !feasible(tb, profiles, weights).ok)
              continue;
            const double delta =
                (cluster_utility(ta, profiles, weights, iid_ref) +
                 cluster_utility(tb, profiles, weights, iid_ref)) -
                (util[a] + util[b]);
            if (delta < -1e-12) {
              ClusterPlan next = cur;
              next.clusters[a] = std::move(ta);
              next.clusters[b] = std::move(tb);
              out.emplace_back(cur_util + delta, std::move(next));
            }
          }
        }
      }
    }
    std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
      return x.first < y.first;
    });
    return out;
  };

  ClusterPlan best_plan = plan;
  double best_util = total_utility(plan);
  std::set<std::string> visited{plan_key(plan)};
  std::vector<std::pair<double, ClusterPlan>> stack{{best_util, plan}};

  while (!stack.empty() && evals < budget) {
    auto [cur_util, cur] = std::move(stack.back());
    stack.pop_back();
    auto next = successors(cur, cur_util);
    // Depth-first with the best successor expanded first.
    for (auto it = next.rbegin(); it != next.rend(); ++it) {
      if (!visited.insert(plan_key(it->second)).second) continue;
      if (it->first < best_util - 1e-12) {
        best_util = it->first;
        best_plan = it->second;
      }
      stack.emplace_back(std::move(*it));
    }
  }
  return best_plan;
}

// Validates the partition property and per-cluster feasibility.
inline void validate_plan(const ClusterPlan& plan,
                          const std::vector<WorkerProfile>& profiles,
                          const UtilityWeights& weights) {
  std::vector<int> seen(profiles.size(), 0);
  for (const Cluster& c : plan.clusters) {
    if (c.members.empty())
      throw PlanningError("plan: cluster without members");
    ++seen[c.top_worker];
    for (int m : c.members) {
      if (m == c.top_worker)
        throw PlanningError("plan: top worker listed as member");
      ++seen[m];
    }
    if (!feasible(c, profiles, weights).ok)
      throw PlanningError("plan: infeasible cluster emitted");
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (seen[i] != 1)
      throw PlanningError("plan: worker " + std::to_string(i) +
                          " assigned " + std::to_string(seen[i]) + " times");
}

}  // namespace psfl
