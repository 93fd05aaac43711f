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

#ifndef COMMSCHED_TUNERS_HPP
#define COMMSCHED_TUNERS_HPP

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "commsched/metanet.hpp"
#include "commsched/simcore.hpp"

namespace commsched {

struct SearchSpace {
  std::vector<std::int64_t> partition_grid;
  std::vector<int> credit_grid;

  /// 4 KB .. 1 GB in powers of two (19 values) x credits 1..16.
  static SearchSpace default_space();
  static SearchSpace geometric(std::int64_t min_bytes, std::int64_t max_bytes, int max_credit);

  /// Row-major in (S_p, S_c): the tie-break order.
  std::vector<SchedulerConfig> configs() const;
  std::size_t size() const { return partition_grid.size() * credit_grid.size(); }
};

void validate(const SearchSpace& space);

/// Smaller S_p wins ties, then smaller S_c.
bool tie_before(const SchedulerConfig& a, const SchedulerConfig& b);
/// True if (speed_a, a) should replace (speed_b, b) as the best.
bool better(double speed_a, const SchedulerConfig& a, double speed_b, const SchedulerConfig& b);

struct Evaluation {
  SchedulerConfig config;
  double speed = 0.0;
  int cost_iterations = 0;
};

struct TunerReport {
  std::string tuner;
  SchedulerConfig best_config;
  double best_speed = 0.0;
  std::vector<Evaluation> evaluations;
  long total_cost_iterations = 0;
  int inferences = 0;  // meta-network inference passes; not simulated iterations
};

using Evaluator = std::function<double(const SchedulerConfig&)>;

/// Evaluator failure: carries what was evaluated before the failure.
class TunerError : public std::runtime_error {
 public:
  TunerError(const std::string& what, TunerReport partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const TunerReport& partial() const { return partial_; }

 private:
  TunerReport partial_;
};

TunerReport grid_search(const SearchSpace& space, const Evaluator& evaluator, int cost_per_eval = 1);

struct BayesOptOptions {
  int budget = 15;
  int initial_points = 3;
  std::uint64_t seed = 1;
  int cost_per_eval = 1;
};

/// GP over (normalized log2 S_p, normalized S_c), SE kernel, EI maximized
/// exhaustively over the unevaluated grid points.
TunerReport bayes_opt(const SearchSpace& space, const Evaluator& evaluator, const BayesOptOptions& options);

struct MetaSelection {
  SchedulerConfig best;
  double predicted_best = 0.0;
  std::vector<SchedulerConfig> candidates;
  std::vector<double> scores;  // mean predicted speed, aligned with candidates
};

/// Scores every candidate of `space` by the mean predicted speed under the
/// runtime features in `metrics`; one encoder pass, no simulation.
MetaSelection meta_select(const MetaNetParams& params, const RuntimeMetrics& metrics, const SearchSpace& space);

/// Mean predicted speed for one config.
double predict_mean_speed(const MetaNetParams& params, const RuntimeMetrics& metrics, const SchedulerConfig& config);

/// Predicted speeds as evaluations of zero simulated cost, one inference.
TunerReport meta_report(const MetaSelection& selection);

std::string report_to_json(const TunerReport& report);
/// config,partition_bytes,credit,speed,cumulative_cost
std::string report_to_csv(const TunerReport& report);

}  // namespace commsched

#endif  // COMMSCHED_TUNERS_HPP
