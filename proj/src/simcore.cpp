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

#include "commsched/simcore.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

namespace commsched {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

// |union(a) ∩ union(b)| for two sorted, internally disjoint interval lists.
double intersection_length(const std::vector<std::pair<double, double>>& a,
                           const std::vector<std::pair<double, double>>& b) {
  double total = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double lo = std::max(a[i].first, b[j].first);
    const double hi = std::min(a[i].second, b[j].second);
    if (hi > lo) total += hi - lo;
    if (a[i].second < b[j].second) {
      ++i;
    } else {
      ++j;
    }
  }
  return total;
}

}  // namespace

void validate(const SchedulerConfig& config) {
  if (config.partition_bytes < kMinPartitionBytes) {
    throw ValidationError("partition size must be >= 4096 bytes, got " + std::to_string(config.partition_bytes));
  }
  if (config.credit_multiplier < 1) {
    throw ValidationError("credit multiplier must be >= 1, got " + std::to_string(config.credit_multiplier));
  }
}

std::string format_config(const SchedulerConfig& config) {
  if (!config.scheduling_enabled) return "baseline";
  const std::int64_t b = config.partition_bytes;
  std::string size;
  if (b % (1 << 30) == 0) {
    size = std::to_string(b >> 30) + "GB";
  } else if (b % (1 << 20) == 0) {
    size = std::to_string(b >> 20) + "MB";
  } else if (b % (1 << 10) == 0) {
    size = std::to_string(b >> 10) + "KB";
  } else {
    size = std::to_string(b);
  }
  return size + ":" + std::to_string(config.credit_multiplier) + "X";
}

SchedulerConfig parse_config(std::string_view text) {
  if (text == "baseline" || text == "none") return SchedulerConfig::baseline();
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw ParseError("config must look like <size>:<credit>, got '" + std::string(text) + "'");
  std::string_view size = text.substr(0, colon);
  std::string_view credit = text.substr(colon + 1);
  if (!credit.empty() && (credit.back() == 'X' || credit.back() == 'x')) credit.remove_suffix(1);

  std::int64_t mult = 1;
  auto ends_with = [&](std::string_view suf) {
    return size.size() > suf.size() && size.substr(size.size() - suf.size()) == suf;
  };
  if (ends_with("KB")) {
    mult = std::int64_t{1} << 10;
  } else if (ends_with("MB")) {
    mult = std::int64_t{1} << 20;
  } else if (ends_with("GB")) {
    mult = std::int64_t{1} << 30;
  }
  if (mult != 1) size.remove_suffix(2);

  SchedulerConfig c;
  std::int64_t n = 0;
  auto r1 = std::from_chars(size.data(), size.data() + size.size(), n);
  int cr = 0;
  auto r2 = std::from_chars(credit.data(), credit.data() + credit.size(), cr);
  if (r1.ec != std::errc{} || r1.ptr != size.data() + size.size() || r2.ec != std::errc{} ||
      r2.ptr != credit.data() + credit.size()) {
    throw ParseError("cannot parse config '" + std::string(text) + "'");
  }
  c.partition_bytes = n * mult;
  c.credit_multiplier = cr;
  validate(c);
  return c;
}

std::vector<std::vector<Chunk>> partition_tensors(const ModelProfile& profile, const SchedulerConfig& config) {
  std::vector<std::vector<Chunk>> out(profile.layers.size());
  for (const auto& layer : profile.layers) {
    auto& chunks = out[static_cast<std::size_t>(layer.index)];
    if (layer.param_bytes == 0) continue;
    if (!config.scheduling_enabled) {
      chunks.push_back({layer.index, layer.param_bytes, 0});
      continue;
    }
    const std::int64_t n = ceil_div(layer.param_bytes, config.partition_bytes);
    chunks.reserve(static_cast<std::size_t>(n));
    std::int64_t left = layer.param_bytes;
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t b = std::min(left, config.partition_bytes);
      chunks.push_back({layer.index, b, static_cast<int>(s)});
      left -= b;
    }
  }
  return out;
}

double comm_factor(Architecture arch, int n_workers) {
  if (arch == Architecture::ParameterServer) return 2.0;
  return 2.0 * static_cast<double>(n_workers - 1) / static_cast<double>(n_workers);
}

double comm_time(std::int64_t bytes, double gbps, Architecture arch, int n_workers, double overhead_s) {
  return static_cast<double>(bytes) * comm_factor(arch, n_workers) / (gbps / 8.0 * 1e9) + overhead_s;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::ChunkFinish:
      return "chunk_finish";
    case EventKind::BpFinish:
      return "bp_finish";
    case EventKind::FpFinish:
      return "fp_finish";
    case EventKind::FpStart:
      return "fp_start";
    case EventKind::ChunkAdmit:
      return "chunk_admit";
  }
  return "unknown";
}

bool event_before(const Event& a, const Event& b) {
  return std::tie(a.t, a.kind, a.layer, a.seq, a.worker, a.iteration) <
         std::tie(b.t, b.kind, b.layer, b.seq, b.worker, b.iteration);
}

double RuntimeMetrics::mean_speed() const {
  if (speed.empty()) return 0.0;
  return std::accumulate(speed.begin(), speed.end(), 0.0) / static_cast<double>(speed.size());
}

double RuntimeMetrics::job_speed() const { return std::accumulate(speed.begin(), speed.end(), 0.0); }

double SimResult::speed(std::size_t first, std::size_t last) const {
  last = std::min(last, iterations.size());
  if (first >= last) return 0.0;
  double total = 0.0;
  for (std::size_t k = first; k < last; ++k) total += iterations[k].iteration_time;
  const double mean = total / static_cast<double>(last - first);
  return static_cast<double>(n_workers) * static_cast<double>(batch_size) / mean;
}

double SimResult::steady_speed() const {
  return iterations.size() > 1 ? speed(1, iterations.size()) : speed(0, iterations.size());
}

std::vector<Event> SimResult::event_log() const {
  std::vector<Event> all;
  for (const auto& it : iterations) all.insert(all.end(), it.events.begin(), it.events.end());
  std::sort(all.begin(), all.end(), event_before);
  return all;
}

RuntimeMetrics collect_metrics(const SimResult& sim, std::size_t first, std::size_t count) {
  if (count == 0 || first + count > sim.iterations.size()) {
    throw ValidationError("metrics window is not fully simulated");
  }
  RuntimeMetrics m;
  const auto& head = sim.iterations[first];
  m.iter_start = head.iteration;
  m.iter_count = static_cast<int>(count);
  m.config = sim.iterations[first + count - 1].config;
  m.model = sim.model;
  m.architecture = sim.architecture;
  m.n_workers = sim.n_workers;
  m.n_layers = sim.n_layers;
  m.batch_size = sim.batch_size;
  const auto n = static_cast<std::size_t>(sim.n_workers);
  const auto l = static_cast<std::size_t>(sim.n_layers);
  m.b_down.assign(n, 0.0);
  m.b_up.assign(n, 0.0);
  m.speed.assign(n, 0.0);
  m.bp_time.assign(l, std::vector<double>(n, 0.0));
  for (std::size_t k = first; k < first + count; ++k) {
    const auto& it = sim.iterations[k];
    for (std::size_t w = 0; w < n; ++w) {
      m.b_down[w] += it.down_gbps[w];
      m.b_up[w] += it.up_gbps[w];
      m.speed[w] += static_cast<double>(sim.batch_size) / it.worker_iteration_time[w];
      for (std::size_t i = 0; i < l; ++i) m.bp_time[i][w] += it.bp_time[w][i];
    }
  }
  const double c = static_cast<double>(count);
  for (std::size_t w = 0; w < n; ++w) {
    m.b_down[w] /= c;
    m.b_up[w] /= c;
    m.speed[w] /= c;
    for (std::size_t i = 0; i < l; ++i) m.bp_time[i][w] /= c;
  }
  return m;
}

std::vector<RuntimeMetrics> group_metrics(const SimResult& sim, int group_size) {
  std::vector<RuntimeMetrics> out;
  const auto g = static_cast<std::size_t>(group_size);
  for (std::size_t first = 0; first + g <= sim.iterations.size(); first += g) {
    if (first == 0 && g > 1) {
      // The warm-up iteration carries no communication backlog; leave it out.
      auto m = collect_metrics(sim, 1, g - 1);
      m.iter_start = sim.iterations[0].iteration;
      out.push_back(std::move(m));
    } else {
      out.push_back(collect_metrics(sim, first, g));
    }
  }
  return out;
}

Simulation::CycleResult Simulation::run_cycle(const std::vector<LayerPlan>& plan, double compute_mult,
                                              const Link& link, bool scheduled, bool record) {
  const int l = static_cast<int>(plan.size());
  CycleResult out;
  out.bp_finish.assign(plan.size(), 0.0);
  out.layer_done.assign(plan.size(), 0.0);
  double t = 0.0;
  for (int i = l - 1; i >= 0; --i) {
    t += plan[static_cast<std::size_t>(i)].bp_time * compute_mult;
    out.bp_finish[static_cast<std::size_t>(i)] = t;
  }
  const double bp_end = out.bp_finish.front();

  if (!scheduled) {
    std::int64_t total = 0;
    for (const auto& p : plan) total += p.bytes;
    const double done = bp_end + link.overhead_s + static_cast<double>(total) * link.seconds_per_byte;
    std::fill(out.layer_done.begin(), out.layer_done.end(), done);
    out.busy.emplace_back(bp_end, done);
    if (record) {
      for (int i = 0; i < l; ++i) {
        const auto& p = plan[static_cast<std::size_t>(i)];
        if (p.bytes > 0) out.chunks.push_back({0, i, 0, p.bytes, bp_end, bp_end + link.overhead_s, done});
      }
    }
    return out;
  }

  struct Flight {
    int layer;
    int seq;
    std::int64_t bytes;
    double work;
    double overhead_end;
    double finish_v;
    double admit;
    double transfer_start;
    bool transferring;
  };

  std::vector<std::int64_t> to_admit(plan.size()), to_finish(plan.size());
  std::vector<std::int64_t> next_seq(plan.size(), 0);
  std::int64_t outstanding = 0;
  for (int i = 0; i < l; ++i) {
    const auto& p = plan[static_cast<std::size_t>(i)];
    to_admit[static_cast<std::size_t>(i)] = p.n_chunks;
    to_finish[static_cast<std::size_t>(i)] = p.n_chunks;
    outstanding += p.n_chunks;
    if (p.n_chunks == 0) out.layer_done[static_cast<std::size_t>(i)] = out.bp_finish[static_cast<std::size_t>(i)];
  }

  std::vector<Flight> flight;
  flight.reserve(static_cast<std::size_t>(link.credit));
  int next_bp = l - 1;  // next layer whose BP completes
  int transferring = 0;
  double now = 0.0;
  double vtime = 0.0;  // attained service of every transferring chunk
  double busy_since = 0.0;

  while (outstanding > 0) {
    // 1. Completions.
    if (transferring > 0) {
      for (std::size_t f = 0; f < flight.size();) {
        auto& fl = flight[f];
        if (fl.transferring && fl.finish_v <= vtime) {
          const auto li = static_cast<std::size_t>(fl.layer);
          if (record) out.chunks.push_back({0, fl.layer, fl.seq, fl.bytes, fl.admit, fl.transfer_start, now});
          if (--to_finish[li] == 0) out.layer_done[li] = now;
          --outstanding;
          --transferring;
          flight[f] = flight.back();
          flight.pop_back();
        } else {
          ++f;
        }
      }
      if (flight.empty()) out.busy.emplace_back(busy_since, now);
    }
    // 2. BP completions make a layer's chunks ready.
    while (next_bp >= 0 && out.bp_finish[static_cast<std::size_t>(next_bp)] <= now) --next_bp;
    // 3. Chunks whose latency phase ended start transferring.
    for (auto& fl : flight) {
      if (!fl.transferring && fl.overhead_end <= now) {
        fl.transferring = true;
        fl.transfer_start = now;
        fl.finish_v = vtime + fl.work;
        ++transferring;
      }
    }
    // 4. Admissions in (layer, seq) order while credit remains.
    while (static_cast<int>(flight.size()) < link.credit) {
      int pick = -1;
      for (int i = next_bp + 1; i < l; ++i) {
        if (to_admit[static_cast<std::size_t>(i)] > 0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) break;
      const auto pi = static_cast<std::size_t>(pick);
      const auto& p = plan[pi];
      const std::int64_t seq = next_seq[pi]++;
      --to_admit[pi];
      const std::int64_t bytes = (seq == p.n_chunks - 1) ? p.last_bytes : p.chunk_bytes;
      if (flight.empty()) busy_since = now;
      Flight fl{pick, static_cast<int>(seq), bytes, static_cast<double>(bytes) * link.seconds_per_byte,
                now + link.overhead_s, 0.0, now, now, false};
      if (link.overhead_s <= 0.0) {
        fl.transferring = true;
        fl.finish_v = vtime + fl.work;
        ++transferring;
      }
      flight.push_back(fl);
    }
    if (outstanding == 0) break;

    // Next event.
    double t_next = kInf;
    if (next_bp >= 0) t_next = out.bp_finish[static_cast<std::size_t>(next_bp)];
    double min_v = kInf;
    for (const auto& fl : flight) {
      if (fl.transferring) {
        min_v = std::min(min_v, fl.finish_v);
      } else {
        t_next = std::min(t_next, fl.overhead_end);
      }
    }
    if (transferring > 0) {
      const double t_fin = now + (min_v - vtime) * static_cast<double>(transferring);
      if (t_fin <= t_next) {
        now = t_fin;
        vtime = min_v;
        continue;
      }
      vtime += (t_next - now) / static_cast<double>(transferring);
    }
    now = t_next;
  }
  return out;
}

Simulation::Simulation(ModelProfile profile, ClusterSpec cluster, BandwidthTrace trace, SchedulerConfig config,
                       SimOptions options, int start_iter)
    : profile_(std::move(profile)),
      cluster_(std::move(cluster)),
      trace_(std::move(trace)),
      config_(config),
      options_(options),
      next_iter_(start_iter) {
  validate(profile_);
  validate(cluster_);
  validate(trace_, cluster_.n_workers);
  validate(config_);
  if (cluster_.compute_scale.empty()) cluster_.compute_scale.assign(static_cast<std::size_t>(cluster_.n_workers), 1.0);
  rebuild_plan();
  const auto n = static_cast<std::size_t>(cluster_.n_workers);
  avail_.assign(profile_.layers.size(), 0.0);
  worker_free_.assign(n, 0.0);
  anchor_.assign(n, 0.0);
  result_.model = profile_.name;
  result_.architecture = cluster_.architecture;
  result_.n_workers = cluster_.n_workers;
  result_.n_layers = profile_.num_layers();
  result_.batch_size = profile_.batch_size;
}

void Simulation::rebuild_plan() {
  plan_.clear();
  for (const auto& layer : profile_.layers) {
    LayerPlan p;
    p.bp_time = layer.bp_time;
    p.fp_time = layer.fp_time;
    p.bytes = layer.param_bytes;
    if (layer.param_bytes > 0) {
      const std::int64_t sp = config_.scheduling_enabled ? config_.partition_bytes : layer.param_bytes;
      p.n_chunks = ceil_div(layer.param_bytes, sp);
      p.chunk_bytes = std::min(sp, layer.param_bytes);
      p.last_bytes = layer.param_bytes - (p.n_chunks - 1) * p.chunk_bytes;
    }
    plan_.push_back(p);
  }
  cache_.clear();
}

const Simulation::CycleResult& Simulation::cycle_for(double compute_mult, double gbps) {
  const auto key = std::make_pair(compute_mult, gbps);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  Link link;
  link.seconds_per_byte = comm_factor(cluster_.architecture, cluster_.n_workers) * 8.0 / (gbps * 1e9);
  link.overhead_s = options_.chunk_overhead_s;
  link.credit = config_.credit_multiplier;
  auto res = run_cycle(plan_, compute_mult, link, config_.scheduling_enabled, options_.record_events);
  return cache_.emplace(key, std::move(res)).first->second;
}

const IterationTimeline& Simulation::step() {
  const int k = next_iter_;
  const int l = profile_.num_layers();
  const int n = cluster_.n_workers;
  const auto L = static_cast<std::size_t>(l);
  const auto N = static_cast<std::size_t>(n);

  IterationTimeline tl;
  tl.iteration = k;
  tl.config = config_;
  tl.compute_share = compute_share_at(trace_, k);
  tl.up_gbps.resize(N);
  tl.down_gbps.resize(N);
  tl.fp_start.assign(N, std::vector<double>(L));
  tl.fp_end.assign(N, std::vector<double>(L));
  tl.bp_start.assign(N, std::vector<double>(L));
  tl.bp_end.assign(N, std::vector<double>(L));
  tl.bp_time.assign(N, std::vector<double>(L));
  tl.comm_done.assign(L, -kInf);
  tl.worker_iteration_time.assign(N, 0.0);

  std::vector<const CycleResult*> cycles(N);
  std::vector<double> bp_origin(N);
  for (std::size_t w = 0; w < N; ++w) {
    const double mult = cluster_.compute_scale[w] * tl.compute_share;
    // FP(k): layer i waits for its parameters and for layer i-1.
    double prev_end = worker_free_[w];
    for (std::size_t i = 0; i < L; ++i) {
      const double s = std::max(avail_[i], prev_end);
      tl.fp_start[w][i] = s;
      prev_end = s + plan_[i].fp_time * mult;
      tl.fp_end[w][i] = prev_end;
    }
    bp_origin[w] = prev_end;
    const LinkRate rate = bandwidth_at(trace_, k, static_cast<int>(w));
    tl.up_gbps[w] = rate.up_gbps;
    tl.down_gbps[w] = rate.down_gbps;
    cycles[w] = &cycle_for(mult, std::min(rate.up_gbps, rate.down_gbps));
    const auto& c = *cycles[w];
    for (std::size_t i = 0; i < L; ++i) {
      tl.bp_time[w][i] = plan_[i].bp_time * mult;
      tl.bp_end[w][i] = bp_origin[w] + c.bp_finish[i];
      tl.bp_start[w][i] = bp_origin[w] + (i + 1 < L ? c.bp_finish[i + 1] : 0.0);
      tl.comm_done[i] = std::max(tl.comm_done[i], bp_origin[w] + c.layer_done[i]);
    }
  }

  std::vector<double> natural_next(N);
  double iter_sum = 0.0;
  for (std::size_t w = 0; w < N; ++w) {
    natural_next[w] = std::max(tl.comm_done[0], tl.bp_end[w][0]);
    tl.worker_iteration_time[w] = natural_next[w] - anchor_[w];
    iter_sum += tl.worker_iteration_time[w];
  }
  tl.iteration_time = iter_sum / static_cast<double>(n);

  // Overlap on worker 0 against BP(k) and the FP(k+1) that would follow.
  {
    const auto& c = *cycles[0];
    std::vector<std::pair<double, double>> busy;
    busy.reserve(c.busy.size());
    double busy_total = 0.0;
    for (const auto& [a, b] : c.busy) {
      busy.emplace_back(bp_origin[0] + a, bp_origin[0] + b);
      busy_total += b - a;
    }
    std::vector<std::pair<double, double>> compute;
    compute.emplace_back(tl.bp_start[0][L - 1], tl.bp_end[0][0]);
    const double next_mult = cluster_.compute_scale[0] * compute_share_at(trace_, k + 1);
    double prev_end = tl.bp_end[0][0];
    for (std::size_t i = 0; i < L; ++i) {
      const double s = std::max(tl.comm_done[i], prev_end);
      prev_end = s + plan_[i].fp_time * next_mult;
      if (prev_end > s) {
        if (!compute.empty() && compute.back().second >= s) {
          compute.back().second = std::max(compute.back().second, prev_end);
        } else {
          compute.emplace_back(s, prev_end);
        }
      }
    }
    tl.link_busy_time = busy_total;
    tl.overlap_fraction = busy_total > 0.0 ? intersection_length(busy, compute) / busy_total : 0.0;
  }

  if (options_.record_events) {
    for (std::size_t w = 0; w < N; ++w) {
      const int wi = static_cast<int>(w);
      for (std::size_t i = 0; i < L; ++i) {
        const int li = static_cast<int>(i);
        tl.events.push_back({tl.fp_start[w][i], EventKind::FpStart, li, 0, wi, k});
        tl.events.push_back({tl.fp_end[w][i], EventKind::FpFinish, li, 0, wi, k});
        tl.events.push_back({tl.bp_end[w][i], EventKind::BpFinish, li, 0, wi, k});
      }
      for (const auto& ch : cycles[w]->chunks) {
        ChunkTiming abs = ch;
        abs.worker = wi;
        abs.admit += bp_origin[w];
        abs.transfer_start += bp_origin[w];
        abs.finish += bp_origin[w];
        tl.chunks.push_back(abs);
        tl.events.push_back({abs.admit, EventKind::ChunkAdmit, ch.layer, ch.seq, wi, k});
        tl.events.push_back({abs.finish, EventKind::ChunkFinish, ch.layer, ch.seq, wi, k});
      }
    }
    std::sort(tl.events.begin(), tl.events.end(), event_before);
  }

  avail_ = tl.comm_done;
  for (std::size_t w = 0; w < N; ++w) {
    worker_free_[w] = tl.bp_end[w][0];
    anchor_[w] = natural_next[w];
  }
  ++next_iter_;
  result_.iterations.push_back(std::move(tl));
  return result_.iterations.back();
}

void Simulation::advance(int n_iters) {
  for (int i = 0; i < n_iters; ++i) step();
}

void Simulation::restart(const SchedulerConfig& config, double penalty_s) {
  validate(config);
  if (penalty_s < 0.0 || !std::isfinite(penalty_s)) throw ValidationError("restart penalty must be >= 0");
  double drained = 0.0;
  for (double a : avail_) drained = std::max(drained, a);
  for (double w : worker_free_) drained = std::max(drained, w);
  const double resume = drained + penalty_s;
  std::fill(avail_.begin(), avail_.end(), resume);
  std::fill(worker_free_.begin(), worker_free_.end(), resume);
  if (config != config_) {
    config_ = config;
    rebuild_plan();
  }
}

SimResult simulate_iterations(const ModelProfile& profile, const ClusterSpec& cluster,
                              const SchedulerConfig& config, const BandwidthTrace& trace, int n_iters,
                              int start_iter, const SimOptions& options) {
  if (n_iters < 1) throw ValidationError("n_iters must be >= 1");
  Simulation sim(profile, cluster, trace, config, options, start_iter);
  sim.advance(n_iters);
  return sim.result();
}

}  // namespace commsched
