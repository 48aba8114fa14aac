#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "psfl/core.hpp"
#include "psfl/data.hpp"
#include "psfl/model.hpp"

namespace psfl {

struct FleetConfig {
  int num_workers = 40;
  double compute_spread = 10.0;
  double base_compute_time = 0.05;  // seconds per bottom iteration
  double bandwidth_min = 125e3;     // bytes/s (1 Mb/s)
  double bandwidth_max = 3.75e6;    // bytes/s (30 Mb/s)

  friend bool operator==(const FleetConfig&, const FleetConfig&) = default;
};

struct DataConfig {
  int num_classes = 10;
  int samples_per_class = 400;
  int feature_dim = 32;
  double noniid_p = 0.0;  // p = 1/delta; 0 means IID
  int test_samples_per_class = 100;

  double concentration() const {
    return noniid_p == 0.0 ? kIidConcentration : 1.0 / noniid_p;
  }

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ModelConfig {
  std::vector<int> layer_dims = {32, 32, 16, 10};
  int split_layer = 2;
  double learning_rate = 0.1;
  double lr_decay = 0.993;  // multiplied in per aggregation round
  int batch_size = 64;

  MlpSpec spec() const { return MlpSpec{layer_dims, split_layer}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ClusteringConfig {
  double lambda = 0.5;
  int kmeans_k = 0;  // 0 selects max(1, round(N/5))
  double per_worker_bandwidth = 125e3;  // b, bytes/s
  long refine_budget = 50000;

  friend bool operator==(const ClusteringConfig&, const ClusteringConfig&) = default;
};

struct FrequencySettings {
  int tau_max = 20;

  friend bool operator==(const FrequencySettings&, const FrequencySettings&) = default;
};

struct TelemetrySettings {
  double alpha = 0.8;
  double jitter = 0.0;  // relative measurement noise amplitude

  friend bool operator==(const TelemetrySettings&, const TelemetrySettings&) = default;
};

struct TrafficSettings {
  bool count_intra_bottom = true;

  friend bool operator==(const TrafficSettings&, const TrafficSettings&) = default;
};

struct OutputConfig {
  std::string dir = "out";

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

inline constexpr const char* kStrategyNames[] = {
    "parallel-sfl", "random-cluster", "fixed-frequency", "single-cluster-sfl"};

struct ExperimentConfig {
  FleetConfig fleet;
  DataConfig data;
  ModelConfig model;
  ClusteringConfig clustering;
  FrequencySettings frequency;
  TelemetrySettings telemetry;
  TrafficSettings traffic;
  int rounds = 60;
  std::string strategy = "parallel-sfl";
  std::uint64_t seed = 1;
  OutputConfig output;

  int resolved_kmeans_k() const {
    if (clustering.kmeans_k > 0) return clustering.kmeans_k;
    const int k = static_cast<int>(std::lround(fleet.num_workers / 5.0));
    return std::max(1, std::min(k, fleet.num_workers));
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

inline void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
  };
  if (c.fleet.num_workers < 2) fail("fleet.num_workers", "must be >= 2");
  if (!(c.fleet.compute_spread >= 1.0)) fail("fleet.compute_spread", "must be >= 1");
  if (!(c.fleet.base_compute_time > 0.0)) fail("fleet.base_compute_time", "must be positive");
  if (!(c.fleet.bandwidth_min > 0.0)) fail("fleet.bandwidth_min", "must be positive");
  if (c.fleet.bandwidth_max < c.fleet.bandwidth_min)
    fail("fleet.bandwidth_max", "must be >= fleet.bandwidth_min");
  if (c.data.num_classes < 2) fail("data.num_classes", "must be >= 2");
  if (c.data.samples_per_class < 1) fail("data.samples_per_class", "must be >= 1");
  if (c.data.feature_dim < 2) fail("data.feature_dim", "must be >= 2");
  if (c.data.noniid_p < 0.0) fail("data.noniid_p", "must be >= 0 (0 = IID)");
  if (c.data.test_samples_per_class < 1) fail("data.test_samples_per_class", "must be >= 1");
  if (static_cast<long>(c.data.num_classes) * c.data.samples_per_class <
      c.fleet.num_workers)
    fail("data.samples_per_class", "dataset smaller than the fleet");
  try {
    c.model.spec().validate();
  } catch (const ConfigError& e) {
    fail("model", e.what());
  }
  if (c.model.layer_dims.front() != c.data.feature_dim)
    fail("model.layer_dims", "first width must equal data.feature_dim");
  if (c.model.layer_dims.back() != c.data.num_classes)
    fail("model.layer_dims", "last width must equal data.num_classes");
  if (!(c.model.learning_rate >= 0.0)) fail("model.learning_rate", "must be >= 0");
  if (!(c.model.lr_decay > 0.0 && c.model.lr_decay <= 1.0))
    fail("model.lr_decay", "must lie in (0, 1]");
  if (c.model.batch_size < 1) fail("model.batch_size", "must be >= 1");
  if (!(c.clustering.lambda >= 0.0 && c.clustering.lambda <= 1.0))
    fail("clustering.lambda", "must lie in [0, 1]");
  if (c.clustering.kmeans_k < 0 || c.clustering.kmeans_k > c.fleet.num_workers)
    fail("clustering.kmeans_k", "must lie in [0, num_workers]");
  if (!(c.clustering.per_worker_bandwidth > 0.0))
    fail("clustering.per_worker_bandwidth", "must be positive");
  if (c.clustering.per_worker_bandwidth > c.fleet.bandwidth_min)
    fail("clustering.per_worker_bandwidth",
         "must not exceed fleet.bandwidth_min or no worker can host a cluster");
  if (c.clustering.refine_budget < 0) fail("clustering.refine_budget", "must be >= 0");
  if (c.frequency.tau_max < 1) fail("frequency.tau_max", "must be >= 1");
  if (!(c.telemetry.alpha >= 0.0 && c.telemetry.alpha <= 1.0))
    fail("telemetry.alpha", "must lie in [0, 1]");
  if (!(c.telemetry.jitter >= 0.0 && c.telemetry.jitter < 1.0))
    fail("telemetry.jitter", "must lie in [0, 1)");
  if (c.rounds < 1) fail("rounds", "must be >= 1");
  bool known = false;
  for (const char* name : kStrategyNames) known = known || c.strategy == name;
  if (!known) fail("strategy", "unknown strategy '" + c.strategy + "'");
  if (c.output.dir.empty()) fail("output.dir", "must not be empty");
}

// --- JSON binding -----------------------------------------------------------

namespace detail {

template <typename T>
void get_if_present(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"fleet",
       {{"num_workers", c.fleet.num_workers},
        {"compute_spread", c.fleet.compute_spread},
        {"base_compute_time", c.fleet.base_compute_time},
        {"bandwidth_min", c.fleet.bandwidth_min},
        {"bandwidth_max", c.fleet.bandwidth_max}}},
      {"data",
       {{"num_classes", c.data.num_classes},
        {"samples_per_class", c.data.samples_per_class},
        {"feature_dim", c.data.feature_dim},
        {"noniid_p", c.data.noniid_p},
        {"test_samples_per_class", c.data.test_samples_per_class}}},
      {"model",
       {{"layer_dims", c.model.layer_dims},
        {"split_layer", c.model.split_layer},
        {"learning_rate", c.model.learning_rate},
        {"lr_decay", c.model.lr_decay},
        {"batch_size", c.model.batch_size}}},
      {"clustering",
       {{"lambda", c.clustering.lambda},
        {"kmeans_k", c.clustering.kmeans_k},
        {"per_worker_bandwidth", c.clustering.per_worker_bandwidth},
        {"refine_budget", c.clustering.refine_budget}}},
      {"frequency", {{"tau_max", c.frequency.tau_max}}},
      {"telemetry", {{"alpha", c.telemetry.alpha}, {"jitter", c.telemetry.jitter}}},
      {"traffic", {{"count_intra_bottom", c.traffic.count_intra_bottom}}},
      {"rounds", c.rounds},
      {"strategy", c.strategy},
      {"seed", c.seed},
      {"output", {{"dir", c.output.dir}}}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  using detail::get_if_present;
  if (j.contains("fleet")) {
    const auto& f = j.at("fleet");
    get_if_present(f, "num_workers", c.fleet.num_workers);
    get_if_present(f, "compute_spread", c.fleet.compute_spread);
    get_if_present(f, "base_compute_time", c.fleet.base_compute_time);
    get_if_present(f, "bandwidth_min", c.fleet.bandwidth_min);
    get_if_present(f, "bandwidth_max", c.fleet.bandwidth_max);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    get_if_present(d, "num_classes", c.data.num_classes);
    get_if_present(d, "samples_per_class", c.data.samples_per_class);
    get_if_present(d, "feature_dim", c.data.feature_dim);
    get_if_present(d, "noniid_p", c.data.noniid_p);
    get_if_present(d, "test_samples_per_class", c.data.test_samples_per_class);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    get_if_present(m, "layer_dims", c.model.layer_dims);
    get_if_present(m, "split_layer", c.model.split_layer);
    get_if_present(m, "learning_rate", c.model.learning_rate);
    get_if_present(m, "lr_decay", c.model.lr_decay);
    get_if_present(m, "batch_size", c.model.batch_size);
  }
  if (j.contains("clustering")) {
    const auto& k = j.at("clustering");
    get_if_present(k, "lambda", c.clustering.lambda);
    get_if_present(k, "kmeans_k", c.clustering.kmeans_k);
    get_if_present(k, "per_worker_bandwidth", c.clustering.per_worker_bandwidth);
    get_if_present(k, "refine_budget", c.clustering.refine_budget);
  }
  if (j.contains("frequency"))
    get_if_present(j.at("frequency"), "tau_max", c.frequency.tau_max);
  if (j.contains("telemetry")) {
    get_if_present(j.at("telemetry"), "alpha", c.telemetry.alpha);
    get_if_present(j.at("telemetry"), "jitter", c.telemetry.jitter);
  }
  if (j.contains("traffic"))
    get_if_present(j.at("traffic"), "count_intra_bottom",
                   c.traffic.count_intra_bottom);
  get_if_present(j, "rounds", c.rounds);
  get_if_present(j, "strategy", c.strategy);
  get_if_present(j, "seed", c.seed);
  if (j.contains("output")) get_if_present(j.at("output"), "dir", c.output.dir);
}

// Scenario presets: the non-IID levels studied by the simulator.
inline ExperimentConfig scenario_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "iid" || name == "noniid-p0") {
    c.data.noniid_p = 0.0;
  } else if (name == "noniid-p1") {
    c.data.noniid_p = 1.0;
  } else if (name == "noniid-p2") {
    c.data.noniid_p = 2.0;
  } else if (name == "noniid-p4") {
    c.data.noniid_p = 4.0;
  } else if (name == "noniid-p5") {
    c.data.noniid_p = 5.0;
  } else if (name == "noniid-p10") {
    c.data.noniid_p = 10.0;
  } else {
    throw ConfigError("scenario: unknown preset '" + name + "'");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: parse failure: ") + e.what());
  }
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad field: ") + e.what());
  }
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << nlohmann::json(c).dump(2) << "\n";
}

}  // namespace psfl
