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

#include "commsched/schedule_oracle.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace commsched::oracle {

std::size_t Instance::total_chunks() const {
  std::size_t n = 0;
  for (const auto& c : chunk_work) n += c.size();
  return n;
}

Instance make_instance(const ModelProfile& profile, std::int64_t partition_bytes, int credit,
                       double seconds_per_byte, double overhead_s) {
  Instance inst;
  inst.overhead_s = overhead_s;
  inst.credit = credit;
  for (const auto& layer : profile.layers) {
    inst.bp_time.push_back(layer.bp_time);
    inst.fp_time.push_back(layer.fp_time);
    std::vector<double> works;
    for (std::int64_t left = layer.param_bytes; left > 0; left -= partition_bytes) {
      works.push_back(static_cast<double>(std::min(left, partition_bytes)) * seconds_per_byte);
    }
    inst.chunk_work.push_back(std::move(works));
  }
  return inst;
}

namespace {

struct Flight {
  int layer;
  int seq;
  double overhead_end;
  double remaining;
  bool transferring;
};

}  // namespace

Replay replay(const Instance& inst, const Order& order) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const int l = static_cast<int>(inst.bp_time.size());
  std::vector<double> ready_at(static_cast<std::size_t>(l));
  double acc = 0.0;
  for (int i = l - 1; i >= 0; --i) {
    acc += inst.bp_time[static_cast<std::size_t>(i)];
    ready_at[static_cast<std::size_t>(i)] = acc;
  }

  Replay out;
  out.priority_admissible = true;
  out.layer_done = ready_at;  // layers without chunks are done when their BP is
  std::vector<std::vector<bool>> admitted(inst.chunk_work.size());
  std::vector<int> left(inst.chunk_work.size());
  for (std::size_t i = 0; i < inst.chunk_work.size(); ++i) {
    admitted[i].assign(inst.chunk_work[i].size(), false);
    left[i] = static_cast<int>(inst.chunk_work[i].size());
  }

  const std::size_t total = order.size();
  std::size_t next = 0, finished = 0;
  std::vector<Flight> flight;
  double t = 0.0;

  // Best waiting chunk at time t by (layer, seq), or (-1, -1).
  auto best_ready = [&]() -> std::pair<int, int> {
    for (int i = 0; i < l; ++i) {
      if (ready_at[static_cast<std::size_t>(i)] > t) continue;
      const auto& adm = admitted[static_cast<std::size_t>(i)];
      for (std::size_t s = 0; s < adm.size(); ++s) {
        if (!adm[s]) return {i, static_cast<int>(s)};
      }
    }
    return {-1, -1};
  };

  while (finished < total) {
    for (std::size_t f = 0; f < flight.size();) {
      if (flight[f].transferring && flight[f].remaining <= 0.0) {
        const auto li = static_cast<std::size_t>(flight[f].layer);
        if (--left[li] == 0) out.layer_done[li] = t;
        ++finished;
        flight.erase(flight.begin() + static_cast<std::ptrdiff_t>(f));
      } else {
        ++f;
      }
    }
    for (auto& f : flight) {
      if (!f.transferring && f.overhead_end <= t) f.transferring = true;
    }
    while (static_cast<int>(flight.size()) < inst.credit && next < total) {
      const auto [li, si] = order[next];
      if (ready_at[static_cast<std::size_t>(li)] > t) break;
      if (best_ready() != std::make_pair(li, si)) out.priority_admissible = false;
      admitted[static_cast<std::size_t>(li)][static_cast<std::size_t>(si)] = true;
      const double work = inst.chunk_work[static_cast<std::size_t>(li)][static_cast<std::size_t>(si)];
      flight.push_back({li, si, t + inst.overhead_s, work, inst.overhead_s <= 0.0});
      ++next;
    }
    // Idle credit while something else is ready: not what a priority queue does.
    if (static_cast<int>(flight.size()) < inst.credit && best_ready().first >= 0) out.priority_admissible = false;
    if (finished == total) break;

    double t_next = kInf;
    for (int i = 0; i < l; ++i) {
      const double r = ready_at[static_cast<std::size_t>(i)];
      if (r > t) t_next = std::min(t_next, r);
    }
    int sharing = 0;
    for (const auto& f : flight) {
      if (f.transferring) {
        ++sharing;
      } else {
        t_next = std::min(t_next, f.overhead_end);
      }
    }
    double min_rem = kInf;
    for (const auto& f : flight) {
      if (f.transferring) min_rem = std::min(min_rem, f.remaining);
    }
    const double m = static_cast<double>(sharing);
    bool completion = false;
    if (sharing > 0 && t + min_rem * m <= t_next) {
      t_next = t + min_rem * m;
      completion = true;
    }
    const double served = (t_next - t) / std::max(m, 1.0);
    for (auto& f : flight) {
      if (!f.transferring) continue;
      if (completion && f.remaining <= min_rem) {
        f.remaining = 0.0;
      } else {
        f.remaining -= served;
        // Finishing within rounding of the served amount counts as finished.
        if (f.remaining <= 1e-15 * served) f.remaining = 0.0;
      }
    }
    t = t_next;
  }

  // FP of the next iteration, starting once BP has freed the worker.
  double prev_end = ready_at.empty() ? 0.0 : ready_at.front();
  for (int i = 0; i < l; ++i) {
    const double s = std::max(out.layer_done[static_cast<std::size_t>(i)], prev_end);
    prev_end = s + inst.fp_time[static_cast<std::size_t>(i)];
  }
  out.period = prev_end;
  return out;
}

Report enumerate(const Instance& inst, std::size_t max_chunks) {
  if (inst.credit < 1) throw std::invalid_argument("credit must be >= 1");
  const std::size_t n = inst.total_chunks();
  if (n > max_chunks) throw std::invalid_argument("too many chunks for exhaustive enumeration");
  Order order;
  for (std::size_t i = 0; i < inst.chunk_work.size(); ++i) {
    for (std::size_t s = 0; s < inst.chunk_work[i].size(); ++s) {
      order.emplace_back(static_cast<int>(i), static_cast<int>(s));
    }
  }
  std::sort(order.begin(), order.end());
  Report rep;
  rep.priority_period = std::numeric_limits<double>::infinity();
  rep.best_period = std::numeric_limits<double>::infinity();
  do {
    const Replay r = replay(inst, order);
    ++rep.n_orders;
    if (r.priority_admissible) {
      ++rep.n_admissible;
      rep.priority_period = std::min(rep.priority_period, r.period);
    }
    if (r.period < rep.best_period) {
      rep.best_period = r.period;
      rep.best_order = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  return rep;
}

}  // namespace commsched::oracle
