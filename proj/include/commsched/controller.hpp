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

#ifndef COMMSCHED_CONTROLLER_HPP
#define COMMSCHED_CONTROLLER_HPP

#include <deque>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "commsched/metanet.hpp"
#include "commsched/simcore.hpp"
#include "commsched/tuners.hpp"

namespace commsched {

enum class ActionKind { Keep, Reconfigure, AdaptThenDecide };
std::string_view to_string(ActionKind kind);

struct Action {
  ActionKind kind = ActionKind::Keep;
  SchedulerConfig config;          // target, only for Reconfigure
  double drift = 0.0;              // |V̂_current - V̄| / V̄
  double predicted_current = 0.0;  // mean V̂ of the running config
  double predicted_best = 0.0;     // mean V̂ of the best candidate (0 if not computed)
  double predicted_gain = 0.0;     // relative gain of best over the reference
};

struct TriggerOptions {
  double drift_threshold = 0.10;
  double gain_threshold = 0.05;
  /// Measure the gain against the observed speed instead of V̂_current.
  bool gain_vs_observed = false;
  SearchSpace space = SearchSpace::default_space();
};

struct ReconfigEvent {
  int iteration = 0;  // first iteration run with new_config
  SchedulerConfig old_config;
  SchedulerConfig new_config;
  double predicted_gain = 0.0;
  double penalty_s = 0.0;
};

struct ControllerState {
  SchedulerConfig current_config;
  MetaNetParams params;
  double last_prediction = 0.0;
  std::deque<TrainingSample> sample_buffer;
  std::size_t buffer_capacity = 64;
  std::vector<ReconfigEvent> reconfig_log;

  /// Appends, evicting the oldest sample beyond capacity.
  void push_sample(TrainingSample sample);
};

/// What the trigger rule looks at, already reduced to scalars.
struct TriggerInputs {
  double observed = 0.0;           // mean V̄ over workers
  double predicted_current = 0.0;  // mean V̂ of the running config
  double predicted_best = 0.0;     // mean V̂ of the best candidate
  SchedulerConfig current;
  SchedulerConfig best;
};

/// The rule itself: drift first (when `check_drift`), then the gain check.
Action decide(const TriggerInputs& in, const TriggerOptions& options, bool check_drift = true);

/// Drift check, then (if no drift) the gain check. Pure.
Action trigger_decide(const ControllerState& state, const RuntimeMetrics& metrics, const TriggerOptions& options);

/// Gain check only; used after an online adaptation in the same group.
Action gain_decide(const ControllerState& state, const RuntimeMetrics& metrics, const TriggerOptions& options);

class ControllerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replaces the config and logs the event; returns the penalty charged.
/// Rejects invalid configs and new_config == current (state unchanged).
double execute_reconfigure(ControllerState& state, const SchedulerConfig& new_config, int iteration,
                           double predicted_gain, double penalty_s);

struct ControllerOptions {
  TriggerOptions trigger;
  AdaptOptions adapt;
  int group_size = 10;
  /// Restart penalty in units of restart_unit().
  double restart_penalty_iterations = 1.0;
  std::size_t buffer_capacity = 64;
  SimOptions sim;
};

struct GroupRecord {
  int group = 0;
  int iter_start = 0;
  int iter_count = 0;
  SchedulerConfig config;     // config the group ran with
  double observed_speed = 0;  // job samples/s over the whole group (incl. any restart gap)
  double predicted_speed = 0; // job-level V̂ of the running config, before any adaptation
  ActionKind action = ActionKind::Keep;  // final action of the group
  bool adapted = false;
  double drift = 0.0;
  double predicted_gain = 0.0;
  SchedulerConfig next_config;
};

struct RunRecord {
  SimResult sim;
  std::vector<GroupRecord> groups;
  std::vector<ReconfigEvent> reconfig_log;
  int adaptations = 0;
  int inferences = 0;
};

/// One compute-bound iteration (FP + BP of the slowest worker, under GPU
/// sharing at `iteration`). Independent of the config being left, so a
/// restart costs the same however bad the old config was.
double restart_unit(const ModelProfile& profile, const ClusterSpec& cluster, const BandwidthTrace& trace,
                    int iteration);

/// The online loop: simulate a group, collect metrics, decide, act.
RunRecord run_autobyte(const ModelProfile& profile, const ClusterSpec& cluster, const BandwidthTrace& trace,
                       const SchedulerConfig& initial_config, const MetaNetParams& params, int n_iters,
                       const ControllerOptions& options = {});

/// group,iter_start,S_p,S_c,observed_speed,predicted_speed,action,drift,predicted_gain
std::string run_record_csv(const RunRecord& record);
std::string reconfig_log_json(const std::vector<ReconfigEvent>& log);

}  // namespace commsched

#endif  // COMMSCHED_CONTROLLER_HPP
