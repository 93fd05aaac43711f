/* Copyright 2026 The commsched Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// sim: command-line front end. Results go to files; timings and progress go
// to stdout/stderr only, so output files stay byte-reproducible.

#include <chrono>
#include <cmath>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "commsched/harness.hpp"
#include "commsched/io.hpp"
#include "commsched/schedule_oracle.hpp"
#include "json.hpp"

using namespace commsched;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<TunerKind> parse_tuner_list(const std::string& text) {
  std::vector<TunerKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_tuner(item));
  }
  if (out.empty()) throw HarnessError("empty tuner list");
  return out;
}

int cmd_run(const std::string& scenario_path, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto s = load_scenario(scenario_path);
  const auto r = run_scenario(s, out);
  std::cout << s.name << ": tuner=" << to_string(s.tuner) << " mean_speed=" << r.mean_speed
            << " reconfigurations=" << r.record.reconfig_log.size() << " tuner_cost=" << r.tuner_cost_iterations
            << " (" << seconds_since(t0) << " s)\n";
  return 0;
}

int cmd_collect(const std::string& spec_path, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto n = collect_dataset(load_collect_spec(spec_path), out);
  std::cout << "wrote " << n << " samples to " << out << " (" << seconds_since(t0) << " s)\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, int epochs, std::uint64_t seed, double lr,
              int batch, bool quiet) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = load_dataset(data);
  TrainOptions o;
  o.epochs = epochs;
  o.seed = seed;
  o.lr = lr;
  o.batch_size = batch;
  if (!quiet) {
    o.on_epoch = [](int epoch, double loss) { std::cout << "epoch " << epoch << " loss " << loss << '\n'; };
  }
  const auto res = train_offline(samples, o);
  save_checkpoint(res.params, out);
  std::cout << "trained on " << samples.size() << " samples: loss " << res.initial_loss << " -> "
            << (res.epoch_loss.empty() ? res.initial_loss : res.epoch_loss.back()) << " (" << seconds_since(t0)
            << " s)\n";
  return 0;
}

int cmd_compare(const std::string& scenario_path, const std::string& tuners, const std::string& out) {
  const auto s = load_scenario(scenario_path);
  const auto rows = compare_tuners(s, parse_tuner_list(tuners));
  write_text_file(out, compare_csv(rows));
  for (const auto& r : rows) {
    std::cout << r.tuner << ": best " << format_config(r.best_config) << " speed " << r.best_speed << " cost "
              << r.cost_iterations << " iterations, wall-clock " << r.wall_seconds << " s\n";
  }
  return 0;
}

int cmd_oracle(const std::string& profile_path, const std::string& config_text, double gbps, double overhead_us,
               std::size_t max_chunks) {
  const auto profile = load_profile(profile_path);
  const auto config = parse_config(config_text);
  if (!config.scheduling_enabled) throw std::invalid_argument("the oracle needs a scheduled config, not baseline");
  if (!(gbps > 0.0) || !std::isfinite(gbps)) throw std::invalid_argument("--gbps must be positive");
  const double overhead = overhead_us * 1e-6;
  // Single parameter-server worker: traffic factor 2.
  const auto inst = oracle::make_instance(profile, config.partition_bytes, config.credit_multiplier,
                                          2.0 * 8.0 / (gbps * 1e9), overhead);
  const auto rep = oracle::enumerate(inst, max_chunks);

  SimOptions so;
  so.chunk_overhead_s = overhead;
  const auto sim = simulate_iterations(profile, ClusterSpec::uniform(1, Architecture::ParameterServer), config,
                                       BandwidthTrace::constant(1, gbps), 4, 0, so);
  const double simulated = sim.iterations[2].iteration_time;

  nlohmann::json j;
  j["model"] = profile.name;
  j["config"] = format_config(config);
  j["gbps"] = gbps;
  j["chunks"] = inst.total_chunks();
  j["orders"] = rep.n_orders;
  j["admissible_orders"] = rep.n_admissible;
  j["priority_period_s"] = rep.priority_period;
  j["best_period_s"] = rep.best_period;
  nlohmann::json order = nlohmann::json::array();
  for (const auto& [l, q] : rep.best_order) order.push_back({l, q});
  j["best_order"] = std::move(order);
  j["simulated_period_s"] = simulated;
  j["relative_difference"] = std::abs(simulated - rep.priority_period) / rep.priority_period;
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator of communication-scheduled distributed training"};
  app.require_subcommand(1);

  std::string scenario, out, spec, data, tuners = "grid,bo,meta", profile, config;
  int epochs = 30, batch = 64;
  std::uint64_t seed = 1;
  double lr = 1e-3, gbps = 10.0, overhead_us = kDefaultChunkOverhead * 1e6;
  std::size_t max_chunks = 8;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run one scenario and write its result files");
  run->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory")->required();

  auto* collect = app.add_subcommand("collect", "Sweep configs x environments into a JSONL dataset");
  collect->add_option("--spec", spec, "Collection spec JSON")->required()->check(CLI::ExistingFile);
  collect->add_option("--out", out, "Output JSONL")->required();

  auto* train = app.add_subcommand("train-meta", "Train the speed predictor offline");
  train->add_option("--data", data, "JSONL dataset")->required()->check(CLI::ExistingFile);
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--epochs", epochs, "Epochs")->check(CLI::PositiveNumber);
  train->add_option("--seed", seed, "Seed");
  train->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "Mini-batch size")->check(CLI::PositiveNumber);
  train->add_flag("--quiet", quiet, "No per-epoch progress");

  auto* compare = app.add_subcommand("compare", "Compare tuners on a scenario");
  compare->add_option("--scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--tuners", tuners, "Comma-separated: grid,bo,meta,none,fixed");
  compare->add_option("--out", out, "Output CSV")->required();

  auto* orc = app.add_subcommand("oracle", "Brute-force the admission order of a tiny instance");
  orc->add_option("--profile", profile, "Profile JSON")->required()->check(CLI::ExistingFile);
  orc->add_option("--config", config, "Config, e.g. 1MB:2X")->required();
  orc->add_option("--gbps", gbps, "Link rate");
  orc->add_option("--overhead-us", overhead_us, "Per-chunk overhead in microseconds")->check(CLI::NonNegativeNumber);
  orc->add_option("--max-chunks", max_chunks, "Refuse instances with more chunks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) return cmd_run(scenario, out);
    if (*collect) return cmd_collect(spec, out);
    if (*train) return cmd_train(data, out, epochs, seed, lr, batch, quiet);
    if (*compare) return cmd_compare(scenario, tuners, out);
    if (*orc) return cmd_oracle(profile, config, gbps, overhead_us, max_chunks);
  } catch (const std::exception& e) {
    std::cerr << "sim: error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
