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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "commsched/harness.hpp"
#include "commsched/io.hpp"
#include "json.hpp"

using namespace commsched;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = COMMSCHED_DATA_DIR;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("commsched_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

json base_scenario() {
  return json{{"name", "t"},
              {"profile", "profiles/alexnet.json"},
              {"cluster", {{"n_workers", 8}, {"architecture", "ps"}}},
              {"trace", "traces/const10.json"},
              {"tuner", "fixed"},
              {"n_iters", 60},
              {"initial_config", "1MB:4X"}};
}

Scenario parse(const json& j) { return parse_scenario(j.dump(), kData); }

json small_collect(double gbps = 10.0) {
  json trace = {{"segments", {{{"start_iteration", 0},
                               {"up_gbps", std::vector<double>(8, gbps)},
                               {"down_gbps", std::vector<double>(8, gbps)}}}}};
  return json{{"profiles", {"profiles/alexnet.json"}},
              {"cluster", {{"n_workers", 8}, {"architecture", "ps"}}},
              {"traces", {{{"name", "flat"}, {"trace", trace}}}},
              {"space", {{"partition_grid", {1 << 20}}, {"credit_grid", {1, 2}}}},
              {"n_iters", 100},
              {"group_size", 10}};
}

std::vector<std::vector<std::string>> read_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("scenario parsing: defaults and relative paths") {
  const auto s = parse(base_scenario());
  CHECK(s.profile.name == "alexnet");
  CHECK(s.cluster.n_workers == 8);
  CHECK(s.tuner == TunerKind::Fixed);
  CHECK(s.initial_config == parse_config("1MB:4X"));
  CHECK(s.eval_iters == 10);
  CHECK(s.bo_budget == 15);
  CHECK(s.measure_from == 10);
  CHECK(s.measure_to == 60);
  CHECK(s.space.size() == 304);
  CHECK(s.controller.trigger.space.size() == 304);

  auto j = base_scenario();
  j["space"] = {{"min_bytes", 1 << 16}, {"max_bytes", 1 << 20}, {"max_credit", 4}};
  j["chunk_overhead_us"] = 0;
  j["controller"] = {{"gain_threshold", 0.2}, {"group_size", 5}};
  const auto t = parse(j);
  CHECK(t.space.size() == 5 * 4);
  CHECK(t.controller.trigger.space.size() == 20);
  CHECK(t.sim.chunk_overhead_s == 0.0);
  CHECK(t.controller.sim.chunk_overhead_s == 0.0);
  CHECK(t.controller.trigger.gain_threshold == 0.2);
  CHECK(t.controller.group_size == 5);
}

TEST_CASE("scenario parsing: shipped scenarios load") {
  for (const auto& entry : fs::directory_iterator(kData / "scenarios")) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_scenario(entry.path()));
  }
}

TEST_CASE("scenario parsing: errors") {
  int n = 0;
  auto bad = [&n](const std::function<void(json&)>& edit) {
    auto j = base_scenario();
    edit(j);
    const int idx = ++n;
    CAPTURE(idx);
    CHECK_THROWS_AS(parse(j), HarnessError);
  };
  bad([](json& j) { j["colour"] = "blue"; });
  bad([](json& j) { j.erase("profile"); });
  bad([](json& j) { j["profile"] = "profiles/missing.json"; });
  bad([](json& j) { j["tuner"] = "annealing"; });
  bad([](json& j) { j["tuner"] = "meta"; });  // no params
  bad([](json& j) { j["n_iters"] = 10; });
  bad([](json& j) { j["measure"] = {30, 20}; });
  bad([](json& j) { j["measure"] = {1, 2, 3}; });
  bad([](json& j) { j["initial_config"] = "3KB:1X"; });
  bad([](json& j) { j["bo_budget"] = 2; });
  bad([](json& j) { j["chunk_overhead_us"] = -1; });
  bad([](json& j) { j["controller"] = {{"drift", 0.1}}; });
  bad([](json& j) { j["space"] = {{"credit_grid", json::array()}}; });
  bad([](json& j) { j["trace"] = {{"segments", {{{"start_iteration", 0}, {"up_gbps", {1.0, 1.0}}, {"down_gbps", {1.0, 1.0}}}}}}; });
  CHECK_THROWS_AS(parse_scenario("{not json", kData), HarnessError);
  CHECK_THROWS_AS(load_scenario(kData / "scenarios" / "nope.json"), HarnessError);
}

TEST_CASE("collect: sample count and environment ids") {
  const auto spec = parse_collect_spec(small_collect().dump(), kData);
  const auto samples = collect_samples(spec);
  // 1 model x 1 trace x 2 configs x 100/10 groups.
  REQUIRE(samples.size() == 20);
  std::set<std::string> envs;
  for (const auto& s : samples) envs.insert(s.env);
  CHECK(envs.size() == 10);
  CHECK(samples.front().env == "alexnet/flat/0");
  CHECK(samples.front().features.credit == 1);
  CHECK(samples.back().features.credit == 2);
  CHECK(samples.back().env == "alexnet/flat/90");
  for (const auto& s : samples) CHECK(s.label.size() == 8);
}

TEST_CASE("collect: datasets are byte-identical across runs") {
  auto j = small_collect();
  j["space"] = {{"min_bytes", 1 << 18}, {"max_bytes", 1 << 22}, {"max_credit", 3}};
  j["configs_per_env"] = 4;
  j["seed"] = 5;
  j["n_iters"] = 30;
  const auto spec = parse_collect_spec(j.dump(), kData);
  const auto dir = scratch("collect");
  fs::create_directories(dir);
  CHECK(collect_dataset(spec, dir / "a.jsonl") == 12);
  CHECK(collect_dataset(spec, dir / "b.jsonl") == 12);
  CHECK(read_text_file(dir / "a.jsonl") == read_text_file(dir / "b.jsonl"));
  // The round trip keeps every sample.
  CHECK(load_dataset(dir / "a.jsonl").size() == 12);
  fs::remove_all(dir);
}

TEST_CASE("collect: with free communication the credit does not matter") {
  auto j = small_collect(1e9);
  j["chunk_overhead_us"] = 0;
  j["space"] = {{"partition_grid", {1 << 16, 1 << 20}}, {"credit_grid", {1, 2, 3, 8, 16}}};
  j["n_iters"] = 20;
  const auto samples = collect_samples(parse_collect_spec(j.dump(), kData));
  REQUIRE(samples.size() == 2 * 5 * 2);
  const double ref = samples.front().label[0];
  for (const auto& s : samples) {
    for (double v : s.label) CHECK(v == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("collect spec errors") {
  int n = 0;
  auto bad = [&n](const std::function<void(json&)>& edit) {
    auto j = small_collect();
    edit(j);
    const int idx = ++n;
    CAPTURE(idx);
    CHECK_THROWS_AS(parse_collect_spec(j.dump(), kData), HarnessError);
  };
  bad([](json& j) { j["extra"] = 1; });
  bad([](json& j) { j["profiles"] = json::array(); });
  bad([](json& j) { j["traces"] = json::array(); });
  bad([](json& j) { j["traces"][0].erase("name"); });
  bad([](json& j) { j["group_size"] = 0; });
  bad([](json& j) { j["n_iters"] = 5; });
  bad([](json& j) { j["configs_per_env"] = -1; });
}

TEST_CASE("grid and BO search cost in iterations") {
  auto j = base_scenario();
  j["eval_iters"] = 4;
  j["n_iters"] = 20;
  j["tuner"] = "grid";
  const auto grid = execute_scenario(parse(j));
  REQUIRE(grid.tuner_report);
  CHECK(grid.tuner_report->evaluations.size() == 304);
  CHECK(grid.tuner_cost_iterations == 304 * 4);

  j["tuner"] = "bo";
  const auto bo = execute_scenario(parse(j));
  REQUIRE(bo.tuner_report);
  CHECK(bo.tuner_report->evaluations.size() == 15);
  CHECK(bo.tuner_cost_iterations == 15 * 4);
  CHECK(bo.tuner_report->best_speed <= grid.tuner_report->best_speed);

  // The run itself uses the winner for every iteration.
  CHECK(grid.configs_used.size() == 1);
  CHECK(grid.configs_used[0].second == grid.tuner_report->best_config);
}

TEST_CASE("run writes its files and the summary is recomputable from them") {
  auto j = base_scenario();
  j["fine_group"] = 5;
  j["measure"] = {10, 60};
  j["record_events"] = true;
  const auto s = parse(j);
  const auto dir = scratch("run");
  const auto r = run_scenario(s, dir);
  for (const char* f : {"summary.json", "run_record.csv", "run_record_fine.csv", "reconfig_log.json", "events.jsonl"}) {
    CHECK(fs::exists(dir / f));
  }
  CHECK_FALSE(fs::exists(dir / "tuner_report.json"));

  const auto summary = json::parse(read_text_file(dir / "summary.json"));
  CHECK(summary.at("mean_speed").get<double>() == r.mean_speed);

  // Job throughput over [10, 60) = sum(count) / sum(count / speed) over the
  // fine groups covering it.
  const auto rows = read_csv(read_text_file(dir / "run_record_fine.csv"));
  REQUIRE(rows[0] == std::vector<std::string>{"group", "iter_start", "S_p", "S_c", "observed_speed"});
  double n = 0.0, t = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const int start = std::stoi(rows[i][1]);
    if (start < 10 || start >= 60) continue;
    n += 5.0;
    t += 5.0 / std::stod(rows[i][4]);
  }
  CHECK(n == 50.0);
  CHECK(n / t == doctest::Approx(summary.at("mean_speed").get<double>()).epsilon(1e-9));
  fs::remove_all(dir);
}

TEST_CASE("the scheduled runs beat the unscheduled baseline") {
  auto j = base_scenario();
  j["tuner"] = "none";
  const auto none = execute_scenario(parse(j));
  CHECK(none.configs_used.size() == 1);
  CHECK_FALSE(none.configs_used[0].second.scheduling_enabled);

  const auto meta = execute_scenario(load_scenario(kData / "scenarios" / "static_alexnet_10g.json"));
  MESSAGE("baseline " << none.mean_speed << " samples/s, meta " << meta.mean_speed << " samples/s");
  CHECK(none.mean_speed <= meta.mean_speed);
}

TEST_CASE("jobs-added: when does the controller react") {
  for (const char* model : {"alexnet", "vgg16", "resnet50"}) {
    const auto s = load_scenario(kData / "scenarios" / (std::string("jobs_added_") + model + "_meta.json"));
    const auto r = execute_scenario(s);
    std::ostringstream os;
    for (const auto& e : r.record.reconfig_log) os << ' ' << e.iteration << ':' << format_config(e.new_config);
    MESSAGE(std::string(model) << ": reconfigurations at" << os.str() << "; adaptations " << r.record.adaptations);
    // Competing jobs become active at iterations 20 and 40; every decision
    // falls on a group boundary.
    for (const auto& e : r.record.reconfig_log) CHECK(e.iteration % s.controller.group_size == 0);
  }
}

TEST_CASE("compare: rows, costs and CSV") {
  auto j = base_scenario();
  j["params"] = "models/meta.ckpt";
  j["eval_iters"] = 3;
  j["space"] = {{"min_bytes", 1 << 16}, {"max_bytes", 1 << 24}, {"max_credit", 8}};
  const auto s = parse(j);
  const auto rows = compare_tuners(s, {TunerKind::Grid, TunerKind::Bo, TunerKind::Meta, TunerKind::None});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].tuner == "grid");
  CHECK(rows[0].evaluations == 9 * 8);
  CHECK(rows[0].cost_iterations == 9 * 8 * 3);
  CHECK(rows[1].evaluations == 15);
  CHECK(rows[1].cost_iterations == 15 * 3);
  CHECK(rows[1].best_speed <= rows[0].best_speed);
  CHECK(rows[2].inferences == 1);
  CHECK(rows[2].cost_iterations == 10);
  CHECK(rows[2].best_speed <= rows[0].best_speed);
  CHECK(rows[2].predicted_speed > 0.0);
  CHECK_FALSE(rows[3].best_config.scheduling_enabled);

  const auto csv = read_csv(compare_csv(rows));
  REQUIRE(csv.size() == 5);
  CHECK(csv[0].size() == 9);
  CHECK(csv[1][0] == "grid");
  CHECK(compare_csv(rows) == compare_csv(compare_tuners(s, {TunerKind::Grid, TunerKind::Bo, TunerKind::Meta,
                                                            TunerKind::None})));
}
