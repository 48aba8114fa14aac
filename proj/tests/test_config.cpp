#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "psfl/config.hpp"

using namespace psfl;

TEST_CASE("default config validates") {
  ExperimentConfig cfg;
  CHECK_NOTHROW(validate_config(cfg));
  CHECK(cfg.model.learning_rate == Catch::Approx(0.1));
  CHECK(cfg.model.lr_decay == Catch::Approx(0.993));
  CHECK(cfg.model.batch_size == 64);
  CHECK(cfg.telemetry.alpha == Catch::Approx(0.8));
  CHECK(cfg.frequency.tau_max == 20);
  CHECK(cfg.clustering.lambda == Catch::Approx(0.5));
  CHECK(cfg.resolved_kmeans_k() == 8);  // N/5 with N = 40
}

TEST_CASE("config json round-trip is the identity") {
  ExperimentConfig cfg;
  cfg.fleet.num_workers = 17;
  cfg.data.noniid_p = 5.0;
  cfg.model.layer_dims = {32, 24, 10};
  cfg.model.split_layer = 1;
  cfg.clustering.kmeans_k = 3;
  cfg.strategy = "fixed-frequency";
  cfg.seed = 987654321;
  cfg.output.dir = "elsewhere";
  const nlohmann::json j = cfg;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(back == cfg);
  const nlohmann::json j2 = back;
  CHECK(j == j2);
}

TEST_CASE("partial json files keep defaults for absent fields") {
  const nlohmann::json j = {{"data", {{"noniid_p", 10.0}}}};
  const ExperimentConfig cfg = j.get<ExperimentConfig>();
  CHECK(cfg.data.noniid_p == 10.0);
  CHECK(cfg.fleet.num_workers == 40);
  CHECK(cfg.model.batch_size == 64);
}

TEST_CASE("unknown strategy fails validation with the field name") {
  ExperimentConfig cfg;
  cfg.strategy = "magic";
  try {
    validate_config(cfg);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("strategy") != std::string::npos);
  }
}

TEST_CASE("cross-field mismatches fail with field-level messages") {
  ExperimentConfig cfg;
  cfg.data.feature_dim = 16;  // model still expects 32 inputs
  try {
    validate_config(cfg);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.layer_dims") != std::string::npos);
  }

  cfg = ExperimentConfig{};
  cfg.clustering.per_worker_bandwidth = cfg.fleet.bandwidth_min * 2;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);

  cfg = ExperimentConfig{};
  cfg.telemetry.alpha = 1.5;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
}

TEST_CASE("scenario presets cover the studied non-iid levels") {
  CHECK(scenario_preset("iid").data.noniid_p == 0.0);
  CHECK(scenario_preset("noniid-p1").data.noniid_p == 1.0);
  CHECK(scenario_preset("noniid-p2").data.noniid_p == 2.0);
  CHECK(scenario_preset("noniid-p4").data.noniid_p == 4.0);
  CHECK(scenario_preset("noniid-p5").data.noniid_p == 5.0);
  CHECK(scenario_preset("noniid-p10").data.noniid_p == 10.0);
  CHECK_THROWS_AS(scenario_preset("noniid-p99"), ConfigError);
}

TEST_CASE("config files load, save and reject garbage") {
  const std::string path = "config_roundtrip_test.json";
  ExperimentConfig cfg;
  cfg.data.noniid_p = 2.0;
  cfg.seed = 31;
  save_config(path, cfg);
  const ExperimentConfig loaded = load_config(path);
  CHECK(loaded == cfg);
  std::remove(path.c_str());

  CHECK_THROWS_AS(load_config("does_not_exist.json"), ConfigError);
  const std::string bad = "config_bad_test.json";
  {
    std::ofstream out(bad);
    out << "{ not json";
  }
  CHECK_THROWS_AS(load_config(bad), ConfigError);
  std::remove(bad.c_str());
}

TEST_CASE("iid sentinel maps to an infinite concentration") {
  DataConfig d;
  d.noniid_p = 0.0;
  CHECK(std::isinf(d.concentration()));
  d.noniid_p = 4.0;
  CHECK(d.concentration() == Catch::Approx(0.25));
}
