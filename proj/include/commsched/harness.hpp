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

#ifndef COMMSCHED_HARNESS_HPP
#define COMMSCHED_HARNESS_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "commsched/controller.hpp"
#include "commsched/metanet.hpp"
#include "commsched/simcore.hpp"
#include "commsched/tuners.hpp"
#include "commsched/workload.hpp"

namespace commsched {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// None runs the unscheduled baseline; Fixed runs initial_config untouched.
enum class TunerKind { None, Fixed, Grid, Bo, Meta };
std::string_view to_string(TunerKind kind);
TunerKind parse_tuner(std::string_view text);

/// A scenario file. Relative paths resolve against the file's directory;
/// `cluster` and `trace` may also be given inline.
struct Scenario {
  std::string name;
  ModelProfile profile;
  ClusterSpec cluster;
  BandwidthTrace trace;
  TunerKind tuner = TunerKind::None;
  int n_iters = 60;
  std::uint64_t seed = 1;
  SchedulerConfig initial_config{4 << 20, 1, true};  // starting point of the online loop
  std::optional<MetaNetParams> params;                 // required for tuner=meta
  SearchSpace space = SearchSpace::default_space();
  int eval_iters = 10;  // simulated iterations per grid/BO evaluation
  int bo_budget = 15;
  int measure_from = 10, measure_to = 60;
  int fine_group = 5;
  bool record_events = false;
  SimOptions sim;
  ControllerOptions controller;
};

Scenario parse_scenario(std::string_view json_text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);

/// Steady speed of `config` on the scenario environment over its first
/// eval_iters iterations (iteration 0 excluded).
double evaluate_config(const Scenario& scenario, const SchedulerConfig& config);

struct ScenarioResult {
  RunRecord record;
  std::optional<TunerReport> tuner_report;
  double mean_speed = 0.0;  // job samples/s over [measure_from, measure_to)
  std::vector<std::pair<int, SchedulerConfig>> configs_used;  // (first iteration, config)
  long tuner_cost_iterations = 0;
};

/// Runs the pipeline without writing anything.
ScenarioResult execute_scenario(const Scenario& scenario);

/// execute_scenario + summary.json, run_record.csv, run_record_fine.csv,
/// reconfig_log.json, tuner_report.json (when a tuner ran) and, with
/// record_events, events.jsonl under `out_dir`.
ScenarioResult run_scenario(const Scenario& scenario, const std::filesystem::path& out_dir);

std::string summary_json(const Scenario& scenario, const ScenarioResult& result);
/// group,iter_start,S_p,S_c,observed_speed over `group`-iteration windows.
std::string fine_csv(const SimResult& sim, int group);

/// Dataset sweep: every profile x config x trace, one sample per group.
struct CollectSpec {
  std::vector<ModelProfile> profiles;
  ClusterSpec cluster;
  std::vector<std::pair<std::string, BandwidthTrace>> traces;  // (name, trace)
  SearchSpace space = SearchSpace::default_space();
  int n_iters = 160;
  int group_size = 10;
  int configs_per_env = 0;  // 0 = all; otherwise a seeded subset per (profile, trace)
  std::uint64_t seed = 1;
  SimOptions sim;
};

CollectSpec parse_collect_spec(std::string_view json_text, const std::filesystem::path& base_dir = {});
CollectSpec load_collect_spec(const std::filesystem::path& path);

/// Samples in sweep order; env = "<model>/<trace>/<iter_start>".
std::vector<TrainingSample> collect_samples(const CollectSpec& spec);
/// Writes JSONL; returns the number of samples.
std::size_t collect_dataset(const CollectSpec& spec, const std::filesystem::path& out);

struct CompareRow {
  std::string tuner;
  SchedulerConfig best_config;
  double best_speed = 0.0;        // evaluated on the simulator for every tuner
  double predicted_speed = 0.0;   // meta only
  long cost_iterations = 0;
  int evaluations = 0;
  int inferences = 0;
  double wall_seconds = 0.0;      // never written to files
};

std::vector<CompareRow> compare_tuners(const Scenario& scenario, const std::vector<TunerKind>& tuners);
/// tuner,best_config,S_p,S_c,best_speed,predicted_speed,cost_iterations,evaluations,inferences
std::string compare_csv(const std::vector<CompareRow>& rows);

}  // namespace commsched

#endif  // COMMSCHED_HARNESS_HPP
