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

#include "commsched/controller.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "commsched/io.hpp"
#include "json.hpp"

namespace commsched {

std::string_view to_string(ActionKind kind) {
  switch (kind) {
    case ActionKind::Keep: return "keep";
    case ActionKind::Reconfigure: return "reconfigure";
    case ActionKind::AdaptThenDecide: return "adapt";
  }
  return "?";
}

void ControllerState::push_sample(TrainingSample sample) {
  if (buffer_capacity == 0) return;
  sample_buffer.push_back(std::move(sample));
  while (sample_buffer.size() > buffer_capacity) sample_buffer.pop_front();
}

Action decide(const TriggerInputs& in, const TriggerOptions& options, bool check_drift) {
  if (!(in.observed > 0.0)) throw ControllerError("metrics carry no positive observed speed");
  Action a;
  a.predicted_current = in.predicted_current;
  a.drift = std::abs(in.predicted_current - in.observed) / in.observed;
  a.config = in.current;
  if (check_drift && a.drift > options.drift_threshold) {
    a.kind = ActionKind::AdaptThenDecide;
    return a;
  }
  a.predicted_best = in.predicted_best;
  const double ref = options.gain_vs_observed ? in.observed : in.predicted_current;
  a.predicted_gain = ref > 0.0 ? (in.predicted_best - ref) / ref : 0.0;
  if (a.predicted_gain > options.gain_threshold && in.best != in.current) {
    a.kind = ActionKind::Reconfigure;
    a.config = in.best;
  }
  return a;
}

namespace {

TriggerInputs inputs_for(const ControllerState& state, const RuntimeMetrics& metrics, const TriggerOptions& options) {
  TriggerInputs in;
  in.observed = metrics.mean_speed();
  in.current = state.current_config;
  const auto sel = meta_select(state.params, metrics, options.space);
  // V̂_current from the same inference pass when the running config is a candidate.
  const auto it = std::find(sel.candidates.begin(), sel.candidates.end(), state.current_config);
  in.predicted_current = it != sel.candidates.end()
                             ? sel.scores[static_cast<std::size_t>(it - sel.candidates.begin())]
                             : predict_mean_speed(state.params, metrics, state.current_config);
  in.predicted_best = sel.predicted_best;
  in.best = sel.best;
  return in;
}

}  // namespace

Action gain_decide(const ControllerState& state, const RuntimeMetrics& metrics, const TriggerOptions& options) {
  return decide(inputs_for(state, metrics, options), options, false);
}

Action trigger_decide(const ControllerState& state, const RuntimeMetrics& metrics, const TriggerOptions& options) {
  return decide(inputs_for(state, metrics, options), options, true);
}

double execute_reconfigure(ControllerState& state, const SchedulerConfig& new_config, int iteration,
                           double predicted_gain, double penalty_s) {
  try {
    validate(new_config);
  } catch (const std::exception& e) {
    throw ControllerError(std::string("invalid reconfiguration target: ") + e.what());
  }
  if (new_config == state.current_config) throw ControllerError("reconfiguration target equals the current config");
  if (!(penalty_s >= 0.0) || !std::isfinite(penalty_s)) throw ControllerError("restart penalty must be finite and >= 0");
  if (!state.reconfig_log.empty() && iteration <= state.reconfig_log.back().iteration) {
    throw ControllerError("reconfiguration iterations must be strictly increasing");
  }
  state.reconfig_log.push_back({iteration, state.current_config, new_config, predicted_gain, penalty_s});
  state.current_config = new_config;
  return penalty_s;
}

double restart_unit(const ModelProfile& profile, const ClusterSpec& cluster, const BandwidthTrace& trace,
                    int iteration) {
  double slowest = 0.0;
  for (int w = 0; w < cluster.n_workers; ++w) slowest = std::max(slowest, cluster.scale(w));
  return (profile.total_fp_time() + profile.total_bp_time()) * slowest * compute_share_at(trace, iteration);
}

RunRecord run_autobyte(const ModelProfile& profile, const ClusterSpec& cluster, const BandwidthTrace& trace,
                       const SchedulerConfig& initial_config, const MetaNetParams& params, int n_iters,
                       const ControllerOptions& options) {
  if (n_iters < 1) throw ControllerError("n_iters must be >= 1");
  if (options.group_size < 1) throw ControllerError("group size must be >= 1");
  if (!(options.restart_penalty_iterations >= 0.0)) throw ControllerError("restart penalty must be >= 0");
  validate(options.trigger.space);

  Simulation sim(profile, cluster, trace, initial_config, options.sim);
  ControllerState state;
  state.current_config = initial_config;
  state.params = params;
  state.buffer_capacity = options.buffer_capacity;

  RunRecord rec;
  int restart_iter = -1;  // iteration carrying the last restart gap
  int group = 0;
  while (sim.next_iteration() < n_iters) {
    const int start = sim.next_iteration();
    const int count = std::min(options.group_size, n_iters - start);
    sim.advance(count);
    const SimResult& res = sim.result();

    GroupRecord g;
    g.group = group++;
    g.iter_start = start;
    g.iter_count = count;
    g.config = state.current_config;
    g.observed_speed = res.speed(static_cast<std::size_t>(start), static_cast<std::size_t>(start + count));
    g.next_config = state.current_config;
    // Decide only on full groups, and never on the final one (nothing left to tune).
    if (count < options.group_size || sim.next_iteration() >= n_iters) {
      rec.groups.push_back(g);
      continue;
    }
    // Warm-up and restart iterations carry no communication backlog (and the
    // latter a restart gap); neither is representative of the config.
    const int skip = (start == 0 || restart_iter == start) && count > 1 ? 1 : 0;
    auto metrics = collect_metrics(res, static_cast<std::size_t>(start + skip), static_cast<std::size_t>(count - skip));
    metrics.iter_start = start;
    state.push_sample(make_sample(metrics));

    Action a = trigger_decide(state, metrics, options.trigger);
    ++rec.inferences;
    g.predicted_speed = a.predicted_current * metrics.n_workers;
    g.drift = a.drift;
    if (a.kind == ActionKind::AdaptThenDecide) {
      const std::vector<TrainingSample> recent(state.sample_buffer.begin(), state.sample_buffer.end());
      state.params = adapt_online(state.params, recent, options.adapt);
      ++rec.adaptations;
      g.adapted = true;
      a = gain_decide(state, metrics, options.trigger);
      ++rec.inferences;
    }
    state.last_prediction = a.predicted_current;
    g.predicted_gain = a.predicted_gain;
    g.action = a.kind;
    if (a.kind == ActionKind::Reconfigure) {
      const double penalty =
          options.restart_penalty_iterations * restart_unit(profile, cluster, trace, sim.next_iteration());
      execute_reconfigure(state, a.config, sim.next_iteration(), a.predicted_gain, penalty);
      sim.restart(a.config, penalty);
      restart_iter = sim.next_iteration();
      g.next_config = a.config;
    }
    rec.groups.push_back(g);
  }
  rec.sim = sim.result();
  rec.reconfig_log = state.reconfig_log;
  return rec;
}

std::string run_record_csv(const RunRecord& record) {
  std::ostringstream os;
  os << "group,iter_start,S_p,S_c,observed_speed,predicted_speed,action,drift,predicted_gain\n";
  for (const auto& g : record.groups) {
    std::string action(to_string(g.action));
    if (g.adapted) action = g.action == ActionKind::Reconfigure ? "adapt+reconfigure" : "adapt";
    os << g.group << ',' << g.iter_start << ',' << g.config.partition_bytes << ',' << g.config.credit_multiplier << ','
       << format_double(g.observed_speed) << ',' << format_double(g.predicted_speed) << ',' << action << ','
       << format_double(g.drift) << ',' << format_double(g.predicted_gain) << '\n';
  }
  return os.str();
}

std::string reconfig_log_json(const std::vector<ReconfigEvent>& log) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : log) {
    arr.push_back({{"iteration", e.iteration},
                   {"old_config", format_config(e.old_config)},
                   {"new_config", format_config(e.new_config)},
                   {"predicted_gain", e.predicted_gain},
                   {"penalty_s", e.penalty_s}});
  }
  return arr.dump(2);
}

}  // namespace commsched
