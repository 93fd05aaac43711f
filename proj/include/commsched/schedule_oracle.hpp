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

// Brute-force reference for tiny single-worker instances. Shares no code with
// the simulator: it enumerates every admission order of the chunks, replays
// each order with a remaining-work (not virtual-time) processor-sharing
// model, and reports the steady-state iteration period.

#ifndef COMMSCHED_SCHEDULE_ORACLE_HPP
#define COMMSCHED_SCHEDULE_ORACLE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "commsched/workload.hpp"

namespace commsched::oracle {

struct Instance {
  std::vector<double> bp_time;                  // [layer], seconds
  std::vector<double> fp_time;                  // [layer], seconds
  std::vector<std::vector<double>> chunk_work;  // [layer][seq], seconds alone on the link
  double overhead_s = 0.0;
  int credit = 1;

  std::size_t total_chunks() const;
};

/// Builds an instance from struct fields only (no simulator helpers).
/// `seconds_per_byte` already includes the architecture traffic factor.
Instance make_instance(const ModelProfile& profile, std::int64_t partition_bytes, int credit,
                       double seconds_per_byte, double overhead_s);

using Order = std::vector<std::pair<int, int>>;  // (layer, seq)

struct Replay {
  double period = 0.0;
  bool priority_admissible = false;  // every admission picked the best ready chunk, no idling
  std::vector<double> layer_done;    // relative to BP start
};

/// Admits chunks strictly in `order`, each as early as its readiness and a
/// free credit slot allow.
Replay replay(const Instance& inst, const Order& order);

struct Report {
  std::size_t n_orders = 0;
  std::size_t n_admissible = 0;
  double priority_period = 0.0;  // min over admissible orders
  double best_period = 0.0;      // min over every order
  Order best_order;
};

/// Throws std::invalid_argument above `max_chunks` (factorial blow-up).
Report enumerate(const Instance& inst, std::size_t max_chunks = 8);

}  // namespace commsched::oracle

#endif  // COMMSCHED_SCHEDULE_ORACLE_HPP
