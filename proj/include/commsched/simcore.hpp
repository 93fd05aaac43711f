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

// Discrete-event model of one data-parallel training job.
//
// Each iteration k runs FP(k) front-to-back, then BP(k) back-to-front. When
// layer i finishes BP its gradient tensor is split into chunks which enter a
// per-worker priority queue keyed (layer, seq). At most `credit_multiplier`
// chunks are in flight per worker; an admitted chunk first pays a fixed
// latency (the per-chunk overhead, no bandwidth used) and then shares the
// worker's link equally with the other chunks in their transfer phase.
// A chunk is globally complete once every worker has finished it, and FP
// layer i of iteration k+1 waits for all of layer i's chunks.
//
// All communication of iteration k completes before BP(k+1) begins, so one
// "cycle" (BP plus communication) can be simulated in isolation relative to
// its BP start and memoized per distinct resource state.

#ifndef COMMSCHED_SIMCORE_HPP
#define COMMSCHED_SIMCORE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "commsched/workload.hpp"

namespace commsched {

inline constexpr std::int64_t kMinPartitionBytes = 4096;
inline constexpr double kDefaultChunkOverhead = 200e-6;

struct SchedulerConfig {
  std::int64_t partition_bytes = 4 << 20;
  int credit_multiplier = 1;
  bool scheduling_enabled = true;

  static SchedulerConfig baseline() { return {4 << 20, 1, false}; }

  bool operator==(const SchedulerConfig&) const = default;
  auto operator<=>(const SchedulerConfig&) const = default;
};

void validate(const SchedulerConfig& config);

/// "4MB:2X" style; "baseline" when scheduling is disabled.
std::string format_config(const SchedulerConfig& config);

/// Accepts "<size>[KB|MB|GB]:<credit>[X]", plain byte counts, or "baseline".
SchedulerConfig parse_config(std::string_view text);

struct Chunk {
  int layer = 0;
  std::int64_t bytes = 0;
  int seq = 0;
};

/// Per-layer chunk lists. Unscheduled configs keep every tensor whole.
std::vector<std::vector<Chunk>> partition_tensors(const ModelProfile& profile, const SchedulerConfig& config);

/// Traffic multiplier per transmitted byte: 2 for PS (push + pull),
/// 2(n-1)/n for ring all-reduce.
double comm_factor(Architecture arch, int n_workers);

double comm_time(std::int64_t bytes, double gbps, Architecture arch, int n_workers, double overhead_s);

struct SimOptions {
  double chunk_overhead_s = kDefaultChunkOverhead;
  bool record_events = false;
};

// Declaration order is the tie-break order for equal-time events.
enum class EventKind { ChunkFinish, BpFinish, FpFinish, FpStart, ChunkAdmit };

std::string_view to_string(EventKind kind);

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::ChunkFinish;
  int layer = 0;
  int seq = 0;
  int worker = 0;
  int iteration = 0;
};

bool event_before(const Event& a, const Event& b);

struct ChunkTiming {
  int worker = 0;
  int layer = 0;
  int seq = 0;
  std::int64_t bytes = 0;
  double admit = 0.0;
  double transfer_start = 0.0;
  double finish = 0.0;
};

struct IterationTimeline {
  int iteration = 0;
  SchedulerConfig config;
  /// Natural FP-layer-0 start of this iteration minus that of the next one,
  /// averaged over workers. A checkpoint-restart gap is charged to the
  /// iteration that follows the restart.
  double iteration_time = 0.0;
  std::vector<double> worker_iteration_time;
  double compute_share = 1.0;
  std::vector<double> up_gbps;    // per worker, after fair sharing
  std::vector<double> down_gbps;  // per worker, after fair sharing
  // [worker][layer], absolute seconds
  std::vector<std::vector<double>> fp_start, fp_end, bp_start, bp_end;
  std::vector<std::vector<double>> bp_time;  // [worker][layer] BP durations
  std::vector<double> comm_done;  // [layer]: last chunk of the layer complete on all workers
  double overlap_fraction = 0.0;  // of link-busy time, share overlapped with BP(k) or FP(k+1)
  double link_busy_time = 0.0;    // worker 0
  std::vector<ChunkTiming> chunks;  // only with record_events
  std::vector<Event> events;        // only with record_events
};

struct RuntimeMetrics {
  int iter_start = 0;
  int iter_count = 0;
  SchedulerConfig config;
  std::string model;
  Architecture architecture = Architecture::ParameterServer;
  int n_workers = 1;
  int n_layers = 0;
  int batch_size = 1;
  std::vector<double> b_down;               // Gbps per worker, window average
  std::vector<double> b_up;                 // Gbps per worker, window average
  std::vector<std::vector<double>> bp_time;  // [layer][worker] seconds, window average
  std::vector<double> speed;                // samples/s per worker, mean of per-iteration speeds

  double mean_speed() const;
  double job_speed() const;
};

struct SimResult {
  std::string model;
  Architecture architecture = Architecture::ParameterServer;
  int n_workers = 1;
  int n_layers = 0;
  int batch_size = 1;
  std::vector<IterationTimeline> iterations;

  /// n_workers * batch_size / mean iteration time over iterations[first, last).
  double speed(std::size_t first, std::size_t last) const;
  /// Speed over everything after the first (warm-up) iteration.
  double steady_speed() const;
  /// All events of all iterations, totally ordered.
  std::vector<Event> event_log() const;
};

/// Runtime metrics over iterations[first, first + count) of `sim`.
RuntimeMetrics collect_metrics(const SimResult& sim, std::size_t first, std::size_t count);

/// One RuntimeMetrics per complete `group_size`-iteration window. The first
/// window skips the warm-up iteration (iter_start still names the window).
std::vector<RuntimeMetrics> group_metrics(const SimResult& sim, int group_size = 10);

/// Stateful simulation that can be advanced incrementally and reconfigured.
class Simulation {
 public:
  Simulation(ModelProfile profile, ClusterSpec cluster, BandwidthTrace trace, SchedulerConfig config,
             SimOptions options = {}, int start_iter = 0);

  const IterationTimeline& step();
  void advance(int n_iters);

  /// Checkpoint-restart: drains outstanding communication, waits `penalty_s`,
  /// and resumes from the next iteration with `config` and no carried overlap.
  void restart(const SchedulerConfig& config, double penalty_s);

  int next_iteration() const { return next_iter_; }
  const SchedulerConfig& config() const { return config_; }
  const SimResult& result() const { return result_; }
  const ModelProfile& profile() const { return profile_; }
  const ClusterSpec& cluster() const { return cluster_; }
  const BandwidthTrace& trace() const { return trace_; }

  struct LayerPlan {
    double bp_time = 0.0;
    double fp_time = 0.0;
    std::int64_t bytes = 0;
    std::int64_t n_chunks = 0;
    std::int64_t chunk_bytes = 0;
    std::int64_t last_bytes = 0;
  };

  struct Link {
    double seconds_per_byte = 0.0;
    double overhead_s = 0.0;
    int credit = 1;
  };

  /// Relative (BP start = 0) outcome of one worker's BP + communication.
  struct CycleResult {
    std::vector<double> bp_finish;   // [layer]
    std::vector<double> layer_done;  // [layer]
    std::vector<std::pair<double, double>> busy;  // merged link-busy intervals
    std::vector<ChunkTiming> chunks;
  };

  static CycleResult run_cycle(const std::vector<LayerPlan>& plan, double compute_mult, const Link& link,
                               bool scheduled, bool record);

 private:
  void rebuild_plan();
  const CycleResult& cycle_for(double compute_mult, double gbps);

  ModelProfile profile_;
  ClusterSpec cluster_;
  BandwidthTrace trace_;
  SchedulerConfig config_;
  SimOptions options_;
  int next_iter_ = 0;
  std::vector<LayerPlan> plan_;
  std::map<std::pair<double, double>, CycleResult> cache_;
  // Carried state between iterations.
  std::vector<double> avail_;        // [layer] time parameters are available for FP
  std::vector<double> worker_free_;  // [worker] end of previous BP
  std::vector<double> anchor_;       // [worker] natural FP0 start of the next iteration
  SimResult result_;
};

SimResult simulate_iterations(const ModelProfile& profile, const ClusterSpec& cluster,
                              const SchedulerConfig& config, const BandwidthTrace& trace, int n_iters,
                              int start_iter = 0, const SimOptions& options = {});

}  // namespace commsched

#endif  // COMMSCHED_SIMCORE_HPP
