#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "psfl/psfl.hpp"

namespace {

struct MetricsFile {
  std::vector<psfl::RoundMetrics> rows;
};

MetricsFile load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw psfl::ConfigError("compare: cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header != psfl::kMetricsHeader)
    throw psfl::ConfigError("compare: " + path +
                            " does not match the metrics schema");
  MetricsFile file;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    psfl::RoundMetrics m;
    long long traffic = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lld,%lf", &m.round,
                    &m.sim_time, &m.intra_waiting, &m.inter_waiting, &traffic,
                    &m.test_accuracy) != 6)
      throw psfl::ConfigError("compare: malformed row in " + path);
    m.traffic_bytes = traffic;
    file.rows.push_back(m);
  }
  if (file.rows.empty())
    throw psfl::ConfigError("compare: " + path + " has no data rows");
  return file;
}

struct RunTotals {
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  double total_time = 0.0;
  double total_traffic_mb = 0.0;
  double mean_intra = 0.0;
  double mean_inter = 0.0;
  std::optional<double> time_to_target;
};

RunTotals totals_of(const MetricsFile& f, double target_acc) {
  RunTotals t;
  double elapsed = 0.0;
  for (const auto& m : f.rows) {
    elapsed += m.sim_time;
    t.best_accuracy = std::max(t.best_accuracy, m.test_accuracy);
    t.total_traffic_mb += static_cast<double>(m.traffic_bytes) / (1024.0 * 1024.0);
    t.mean_intra += m.intra_waiting;
    t.mean_inter += m.inter_waiting;
    if (!t.time_to_target && m.test_accuracy >= target_acc)
      t.time_to_target = elapsed;
  }
  t.final_accuracy = f.rows.back().test_accuracy;
  t.total_time = elapsed;
  t.mean_intra /= static_cast<double>(f.rows.size());
  t.mean_inter /= static_cast<double>(f.rows.size());
  return t;
}

std::string fmt_time(const std::optional<double>& t) {
  if (!t) return "not reached";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", *t);
  return buf;
}

int do_run(const std::string& config_path, const std::string& scenario,
           const std::string& strategy, std::optional<std::uint64_t> seed,
           std::optional<int> rounds, const std::string& out_dir) {
  psfl::ExperimentConfig cfg;
  if (!scenario.empty()) cfg = psfl::scenario_preset(scenario);
  if (!config_path.empty()) {
    psfl::ExperimentConfig file_cfg = psfl::load_config(config_path);
    if (!scenario.empty()) {
      // Scenario fixes the data distribution; the file supplies the rest.
      const double p = cfg.data.noniid_p;
      cfg = file_cfg;
      cfg.data.noniid_p = p;
    } else {
      cfg = file_cfg;
    }
  }
  if (!strategy.empty()) cfg.strategy = strategy;
  if (seed) cfg.seed = *seed;
  if (rounds) cfg.rounds = *rounds;
  if (!out_dir.empty()) cfg.output.dir = out_dir;
  psfl::validate_config(cfg);

  std::filesystem::create_directories(cfg.output.dir);
  const auto path = [&](const char* name) {
    return (std::filesystem::path(cfg.output.dir) / name).string();
  };
  std::ofstream csv(path("metrics.csv"));
  std::ofstream plans(path("plans.jsonl"));
  if (!csv || !plans)
    throw psfl::ConfigError("output.dir: cannot write into " + cfg.output.dir);

  psfl::TrainingSinks sinks;
  sinks.metrics_csv = &csv;
  sinks.plans = &plans;
  const psfl::TrainingResult result = psfl::run_training(cfg, sinks);

  std::ofstream summary(path("summary.json"));
  summary << result.summary.dump(2) << "\n";

  const auto& last = result.rounds.back();
  std::printf(
      "strategy=%s seed=%llu rounds=%d final_accuracy=%.4f "
      "total_sim_time=%.2fs traffic=%.1fMB\n",
      cfg.strategy.c_str(), static_cast<unsigned long long>(cfg.seed),
      cfg.rounds, last.test_accuracy,
      result.summary["total_sim_time"].get<double>(),
      result.summary["total_traffic_bytes"].get<double>() / (1024.0 * 1024.0));
  return 0;
}

int do_compare(const std::string& path_a, const std::string& path_b,
               std::optional<double> target_acc, const std::string& out_path) {
  const MetricsFile a = load_metrics(path_a);
  const MetricsFile b = load_metrics(path_b);

  double best_a = 0.0, best_b = 0.0;
  for (const auto& m : a.rows) best_a = std::max(best_a, m.test_accuracy);
  for (const auto& m : b.rows) best_b = std::max(best_b, m.test_accuracy);
  const double target = target_acc ? *target_acc : std::min(best_a, best_b);

  const RunTotals ta = totals_of(a, target);
  const RunTotals tb = totals_of(b, target);

  std::printf("metric                     %20s %20s\n", "A", "B");
  std::printf("final accuracy             %20.4f %20.4f\n", ta.final_accuracy,
              tb.final_accuracy);
  std::printf("accuracy delta (A-B)       %20.4f\n",
              ta.final_accuracy - tb.final_accuracy);
  std::printf("target accuracy            %20.4f\n", target);
  std::printf("time to target [s]         %20s %20s\n",
              fmt_time(ta.time_to_target).c_str(),
              fmt_time(tb.time_to_target).c_str());
  std::printf("total sim time [s]         %20.3f %20.3f\n", ta.total_time,
              tb.total_time);
  std::printf("total traffic [MB]         %20.1f %20.1f\n", ta.total_traffic_mb,
              tb.total_traffic_mb);
  std::printf("mean intra waiting [s]     %20.4f %20.4f\n", ta.mean_intra,
              tb.mean_intra);
  std::printf("mean inter waiting [s]     %20.4f %20.4f\n", ta.mean_inter,
              tb.mean_inter);

  auto side = [](const RunTotals& t) {
    nlohmann::json j{{"final_accuracy", t.final_accuracy},
                     {"best_accuracy", t.best_accuracy},
                     {"total_sim_time", t.total_time},
                     {"total_traffic_mb", t.total_traffic_mb},
                     {"mean_intra_waiting", t.mean_intra},
                     {"mean_inter_waiting", t.mean_inter}};
    if (t.time_to_target)
      j["time_to_target"] = *t.time_to_target;
    else
      j["time_to_target"] = nullptr;
    return j;
  };
  nlohmann::json out{{"target_accuracy", target},
                     {"a", side(ta)},
                     {"b", side(tb)},
                     {"accuracy_delta", ta.final_accuracy - tb.final_accuracy}};
  std::ofstream f(out_path);
  if (!f) throw psfl::ConfigError("compare: cannot write " + out_path);
  f << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ParallelSFL split-federated-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, scenario, strategy, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  auto* run = app.add_subcommand("run", "run one training experiment");
  run->add_option("--config", config_path, "experiment config JSON");
  run->add_option("--scenario", scenario,
                  "preset: iid, noniid-p1, noniid-p2, noniid-p4, noniid-p5, "
                  "noniid-p10");
  run->add_option("--strategy", strategy,
                  "parallel-sfl | random-cluster | fixed-frequency | "
                  "single-cluster-sfl");
  run->add_option("--seed", seed, "master seed");
  run->add_option("--rounds", rounds, "aggregation rounds");
  run->add_option("--out", out_dir, "output directory");

  std::string path_a, path_b, compare_out = "compare.json";
  std::optional<double> target_acc;
  auto* cmp = app.add_subcommand("compare", "compare two metrics CSV files");
  cmp->add_option("a", path_a, "first metrics.csv")->required();
  cmp->add_option("b", path_b, "second metrics.csv")->required();
  cmp->add_option("--target-acc", target_acc, "target accuracy for time-to-accuracy");
  cmp->add_option("--out", compare_out, "summary JSON path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed())
      return do_run(config_path, scenario, strategy, seed, rounds, out_dir);
    return do_compare(path_a, path_b, target_acc, compare_out);
  } catch (const psfl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
