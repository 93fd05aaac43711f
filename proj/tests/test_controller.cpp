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
#include <limits>
#include <random>
#include <sstream>

#include "commsched/controller.hpp"

using namespace commsched;

namespace {

constexpr std::int64_t kMB = std::int64_t{1} << 20;
constexpr double kInf = std::numeric_limits<double>::infinity();

const std::string kData = COMMSCHED_DATA_DIR;

TriggerInputs inputs(double observed, double current, double best) {
  TriggerInputs in;
  in.observed = observed;
  in.predicted_current = current;
  in.predicted_best = best;
  in.current = {4 * kMB, 1, true};
  in.best = {1 * kMB, 4, true};
  return in;
}

MetaNetParams small_params(std::uint64_t seed) {
  MetaNetDims d;
  d.d_e = 4;
  d.hidden = 4;
  d.dense = 6;
  d.embed = 3;
  d.n_max = 8;
  auto p = MetaNetParams::init(d, {"alexnet"}, {"ps"}, seed);
  p.norm.log_t_mean = std::log(2e-3);
  p.norm.log_b_mean = std::log(5.0);
  p.norm.compute_ref = 0.01;
  p.norm.label_scale = 100.0;
  return p;
}

struct Env {
  ModelProfile profile = load_profile(kData + "/profiles/alexnet.json");
  ClusterSpec cluster = ClusterSpec::uniform(8, Architecture::ParameterServer);
  BandwidthTrace trace = BandwidthTrace::constant(8, 10.0);
};

std::vector<int> lines_per_field(const std::string& csv) {
  std::vector<int> out;
  std::istringstream is(csv);
  std::string line;
  while (std::getline(is, line)) {
    int commas = 0;
    for (char c : line) commas += c == ',';
    out.push_back(commas);
  }
  return out;
}

}  // namespace

TEST_CASE("trigger rule: worked examples") {
  TriggerOptions o;
  // 2% drift, 4% gain: nothing to do.
  auto a = decide(inputs(100.0, 102.0, 102.0 * 1.04), o);
  CHECK(a.kind == ActionKind::Keep);
  CHECK(a.drift == doctest::Approx(0.02));
  CHECK(a.predicted_gain == doctest::Approx(0.04));
  CHECK(a.config == SchedulerConfig{4 * kMB, 1, true});

  // 12% gain: switch to the best candidate.
  a = decide(inputs(100.0, 102.0, 102.0 * 1.12), o);
  CHECK(a.kind == ActionKind::Reconfigure);
  CHECK(a.config == SchedulerConfig{1 * kMB, 4, true});
  CHECK(a.predicted_gain == doctest::Approx(0.12));

  // 15% drift wins over any gain; the gain is not evaluated.
  a = decide(inputs(100.0, 115.0, 200.0), o);
  CHECK(a.kind == ActionKind::AdaptThenDecide);
  CHECK(a.drift == doctest::Approx(0.15));
  CHECK(a.predicted_gain == 0.0);

  // ...unless the drift check is skipped (post-adaptation).
  a = decide(inputs(100.0, 115.0, 200.0), o, false);
  CHECK(a.kind == ActionKind::Reconfigure);
}

TEST_CASE("trigger rule: thresholds are strict") {
  TriggerOptions o;
  // 10/100 and 5/100 are exactly the double literals 0.1 and 0.05.
  CHECK(decide(inputs(100.0, 110.0, 110.0), o).kind == ActionKind::Keep);
  CHECK(decide(inputs(100.0, 90.0, 90.0), o).kind == ActionKind::Keep);
  CHECK(decide(inputs(100.0, 100.0, 105.0), o).kind == ActionKind::Keep);
  CHECK(decide(inputs(100.0, 100.0, 105.0001), o).kind == ActionKind::Reconfigure);
}

TEST_CASE("trigger rule: best == current never reconfigures") {
  auto in = inputs(100.0, 100.0, 150.0);
  in.best = in.current;
  CHECK(decide(in, {}).kind == ActionKind::Keep);
}

TEST_CASE("trigger rule: gain against the observed speed") {
  TriggerOptions o;
  o.gain_vs_observed = true;
  // V̂_current 108 (8% drift), best 110: 1.9% over V̂_current but 10% over observed.
  const auto a = decide(inputs(100.0, 108.0, 110.0), o);
  CHECK(a.kind == ActionKind::Reconfigure);
  CHECK(a.predicted_gain == doctest::Approx(0.10));
  o.gain_vs_observed = false;
  CHECK(decide(inputs(100.0, 108.0, 110.0), o).kind == ActionKind::Keep);
}

TEST_CASE("trigger rule: no observed speed is an error") {
  CHECK_THROWS_AS(decide(inputs(0.0, 1.0, 1.0), {}), ControllerError);
}

TEST_CASE("property: reconfigure only above the gain threshold") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(1.0, 200.0);
  TriggerOptions o;
  int reconfigs = 0;
  for (int i = 0; i < 5000; ++i) {
    const double obs = u(rng), cur = obs * (1.0 + 0.3 * (u(rng) / 200.0 - 0.5));
    const double best = cur * (1.0 + 0.2 * u(rng) / 200.0);
    const auto a = decide(inputs(obs, cur, best), o);
    if (a.kind == ActionKind::Reconfigure) {
      ++reconfigs;
      CHECK(a.predicted_gain > o.gain_threshold);
      CHECK((best - cur) / cur > 0.05);
    }
    if (a.kind == ActionKind::AdaptThenDecide) CHECK(std::abs(cur - obs) / obs > 0.10);
  }
  CHECK(reconfigs > 100);
}

TEST_CASE("sample buffer evicts the oldest") {
  ControllerState s;
  s.buffer_capacity = 3;
  for (int i = 0; i < 5; ++i) {
    TrainingSample t;
    t.iter_start = i * 10;
    s.push_sample(t);
  }
  REQUIRE(s.sample_buffer.size() == 3);
  CHECK(s.sample_buffer.front().iter_start == 20);
  CHECK(s.sample_buffer.back().iter_start == 40);

  ControllerState none;
  none.buffer_capacity = 0;
  none.push_sample({});
  CHECK(none.sample_buffer.empty());
}

TEST_CASE("execute_reconfigure guards") {
  ControllerState s;
  s.current_config = {4 * kMB, 1, true};
  CHECK_THROWS_AS(execute_reconfigure(s, {4 * kMB, 1, true}, 10, 0.1, 0.0), ControllerError);
  CHECK_THROWS_AS(execute_reconfigure(s, {0, 1, true}, 10, 0.1, 0.0), ControllerError);
  CHECK_THROWS_AS(execute_reconfigure(s, {kMB, 0, true}, 10, 0.1, 0.0), ControllerError);
  CHECK_THROWS_AS(execute_reconfigure(s, {kMB, 1, true}, 10, 0.1, -1.0), ControllerError);
  CHECK_THROWS_AS(execute_reconfigure(s, {kMB, 1, true}, 10, 0.1, std::nan("")), ControllerError);
  CHECK(s.reconfig_log.empty());
  CHECK(s.current_config == SchedulerConfig{4 * kMB, 1, true});

  CHECK(execute_reconfigure(s, {kMB, 2, true}, 10, 0.2, 0.5) == 0.5);
  CHECK(s.current_config == SchedulerConfig{kMB, 2, true});
  REQUIRE(s.reconfig_log.size() == 1);
  CHECK(s.reconfig_log[0].old_config == SchedulerConfig{4 * kMB, 1, true});
  CHECK(s.reconfig_log[0].iteration == 10);
  CHECK_THROWS_AS(execute_reconfigure(s, {kMB, 3, true}, 10, 0.2, 0.5), ControllerError);
  CHECK(s.reconfig_log.size() == 1);
}

TEST_CASE("never-firing trigger reproduces the plain simulation bit for bit") {
  Env e;
  ControllerOptions o;
  o.trigger.drift_threshold = kInf;
  o.trigger.gain_threshold = kInf;
  const SchedulerConfig cfg{2 * kMB, 3, true};
  const auto rec = run_autobyte(e.profile, e.cluster, e.trace, cfg, small_params(3), 45, o);
  const auto ref = simulate_iterations(e.profile, e.cluster, cfg, e.trace, 45, 0, o.sim);
  REQUIRE(rec.sim.iterations.size() == ref.iterations.size());
  for (std::size_t i = 0; i < ref.iterations.size(); ++i) {
    CHECK(rec.sim.iterations[i].iteration_time == ref.iterations[i].iteration_time);
  }
  CHECK(rec.reconfig_log.empty());
  CHECK(rec.adaptations == 0);
  // Groups at 0,10,20,30 decide; 40..44 is partial.
  CHECK(rec.groups.size() == 5);
  CHECK(rec.inferences == 4);
  CHECK(rec.groups.back().iter_count == 5);
}

TEST_CASE("a reconfiguration charges exactly one restart penalty") {
  Env e;
  // All-zero network: every candidate ties, so the tie-break picks the
  // smallest config; a -inf gain threshold makes that fire once.
  const auto params = small_params(1).zeros_like();
  ControllerOptions o;
  o.trigger.drift_threshold = kInf;
  o.trigger.gain_threshold = -kInf;
  o.restart_penalty_iterations = 2.0;
  const SchedulerConfig start{4 * kMB, 1, true};
  const auto rec = run_autobyte(e.profile, e.cluster, e.trace, start, params, 40, o);
  REQUIRE(rec.reconfig_log.size() == 1);
  const auto& ev = rec.reconfig_log[0];
  CHECK(ev.iteration == 10);
  CHECK(ev.new_config == SchedulerConfig{4096, 1, true});

  // Penalty = 2 x the compute-bound iteration, summed by hand.
  double compute = 0.0;
  for (const auto& l : e.profile.layers) compute += l.fp_time + l.bp_time;
  CHECK(ev.penalty_s == doctest::Approx(2.0 * compute).epsilon(1e-12));

  Simulation manual(e.profile, e.cluster, e.trace, start, o.sim);
  manual.advance(10);
  manual.restart(ev.new_config, ev.penalty_s);
  manual.advance(30);
  REQUIRE(manual.result().iterations.size() == rec.sim.iterations.size());
  for (std::size_t i = 0; i < rec.sim.iterations.size(); ++i) {
    CHECK(rec.sim.iterations[i].iteration_time == manual.result().iterations[i].iteration_time);
  }
  // Only iteration 10 carries the gap: against a free restart it differs by
  // exactly the penalty, and nothing after it differs.
  Simulation free_restart(e.profile, e.cluster, e.trace, start, o.sim);
  free_restart.advance(10);
  free_restart.restart(ev.new_config, 0.0);
  free_restart.advance(30);
  const auto& f = free_restart.result().iterations;
  CHECK(rec.sim.iterations[10].iteration_time - f[10].iteration_time == doctest::Approx(ev.penalty_s).epsilon(1e-9));
  // (Absolute times are shifted, so compare to rounding.)
  for (std::size_t i = 11; i < f.size(); ++i) {
    CHECK(rec.sim.iterations[i].iteration_time == doctest::Approx(f[i].iteration_time).epsilon(1e-12));
  }
  CHECK(rec.groups[0].next_config == ev.new_config);
  CHECK(rec.groups[1].config == ev.new_config);
  CHECK(rec.groups[1].action == ActionKind::Keep);
}

TEST_CASE("restart unit follows the slowest worker and GPU sharing") {
  Env e;
  double compute = 0.0;
  for (const auto& l : e.profile.layers) compute += l.fp_time + l.bp_time;
  CHECK(restart_unit(e.profile, e.cluster, e.trace, 0) == doctest::Approx(compute));
  e.cluster.compute_scale = {1, 1, 1.5, 1, 1, 1, 1, 1};
  e.trace.jobs.push_back({0, 0});
  CHECK(restart_unit(e.profile, e.cluster, e.trace, 3) ==
        doctest::Approx(compute * 1.5 * compute_share_at(e.trace, 3)));
}

TEST_CASE("drift triggers an adaptation that is logged") {
  Env e;
  ControllerOptions o;
  o.adapt.steps = 5;
  // A random tiny network is far off, so drift fires on the first group.
  const auto rec = run_autobyte(e.profile, e.cluster, e.trace, {4 * kMB, 1, true}, small_params(9), 30, o);
  CHECK(rec.adaptations >= 1);
  CHECK(rec.groups[0].adapted);
  CHECK(rec.groups[0].drift > 0.10);
  CHECK(rec.inferences == rec.adaptations + 2);
}

TEST_CASE("run_autobyte is deterministic and its CSV is well formed") {
  Env e;
  e.trace = load_trace(kData + "/traces/alt_3_10.json");
  ControllerOptions o;
  o.adapt.steps = 5;
  const auto a = run_autobyte(e.profile, e.cluster, e.trace, {4 * kMB, 1, true}, small_params(4), 60, o);
  const auto b = run_autobyte(e.profile, e.cluster, e.trace, {4 * kMB, 1, true}, small_params(4), 60, o);
  const auto csv = run_record_csv(a);
  CHECK(csv == run_record_csv(b));
  CHECK(reconfig_log_json(a.reconfig_log) == reconfig_log_json(b.reconfig_log));

  CHECK(csv.rfind("group,iter_start,S_p,S_c,observed_speed,predicted_speed,action,drift,predicted_gain\n", 0) == 0);
  const auto fields = lines_per_field(csv);
  CHECK(fields.size() == a.groups.size() + 1);
  for (int f : fields) CHECK(f == 8);
}

TEST_CASE("run_autobyte rejects bad options") {
  Env e;
  ControllerOptions o;
  CHECK_THROWS_AS(run_autobyte(e.profile, e.cluster, e.trace, {kMB, 1, true}, small_params(1), 0, o), ControllerError);
  o.group_size = 0;
  CHECK_THROWS_AS(run_autobyte(e.profile, e.cluster, e.trace, {kMB, 1, true}, small_params(1), 10, o), ControllerError);
}
