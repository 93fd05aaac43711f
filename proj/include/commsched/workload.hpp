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

#ifndef COMMSCHED_WORKLOAD_HPP
#define COMMSCHED_WORKLOAD_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace commsched {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One trainable layer. Index 0 is the front layer (first in FP, last in BP).
struct LayerSpec {
  int index = 0;
  std::int64_t param_bytes = 0;
  double fp_time = 0.0;  // seconds
  double bp_time = 0.0;  // seconds

  bool operator==(const LayerSpec&) const = default;
};

struct ModelProfile {
  std::string name;
  std::vector<LayerSpec> layers;
  int batch_size = 1;

  int num_layers() const { return static_cast<int>(layers.size()); }
  std::int64_t total_bytes() const;
  double total_fp_time() const;
  double total_bp_time() const;

  bool operator==(const ModelProfile&) const = default;
};

enum class Architecture { ParameterServer, RingAllReduce };

std::string_view to_string(Architecture arch);
Architecture parse_architecture(std::string_view text);

struct ClusterSpec {
  int n_workers = 1;
  Architecture architecture = Architecture::ParameterServer;
  /// Per-worker multiplier on fp_time/bp_time; empty means all 1.0.
  std::vector<double> compute_scale;

  double scale(int worker) const {
    return compute_scale.empty() ? 1.0 : compute_scale.at(static_cast<std::size_t>(worker));
  }
  bool homogeneous() const;

  static ClusterSpec uniform(int n_workers, Architecture arch);
};

struct BandwidthSegment {
  int start_iteration = 0;
  std::vector<double> up_gbps;
  std::vector<double> down_gbps;
};

/// A competing job. It arrives at `arrive_iter` and starts consuming resources
/// once its initialization finishes, i.e. from arrive_iter + init_iters on.
struct CompetingJob {
  int arrive_iter = 0;
  int init_iters = 0;

  int active_from() const { return arrive_iter + init_iters; }
};

struct BandwidthTrace {
  std::vector<BandwidthSegment> segments;
  std::vector<CompetingJob> jobs;
  /// Whether competing jobs also share the GPU (compute times scale with the
  /// number of active jobs) or only the network.
  bool jobs_share_compute = true;

  static BandwidthTrace constant(int n_workers, double gbps);
};

struct LinkRate {
  double up_gbps = 0.0;
  double down_gbps = 0.0;
};

/// Number of jobs (including the measured one) holding resources at `iteration`.
int active_jobs(const BandwidthTrace& trace, int iteration);

/// Fair-shared bandwidth seen by one worker at `iteration`. Iterations past the
/// last segment keep the last segment's rates.
LinkRate bandwidth_at(const BandwidthTrace& trace, int iteration, int worker);

/// Multiplier applied to compute times at `iteration` by GPU sharing.
double compute_share_at(const BandwidthTrace& trace, int iteration);

void validate(const ModelProfile& profile);
void validate(const ClusterSpec& cluster);
void validate(const BandwidthTrace& trace, int n_workers);

ModelProfile load_profile(const std::filesystem::path& path);
ModelProfile parse_profile(std::string_view json_text);
std::string serialize_profile(const ModelProfile& profile);

BandwidthTrace load_trace(const std::filesystem::path& path);
BandwidthTrace parse_trace(std::string_view json_text);
std::string serialize_trace(const BandwidthTrace& trace);

ClusterSpec parse_cluster(std::string_view json_text);

}  // namespace commsched

#endif  // COMMSCHED_WORKLOAD_HPP
