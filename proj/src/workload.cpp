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

#include "commsched/workload.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "commsched/io.hpp"
#include "json.hpp"

namespace commsched {

using json = nlohmann::json;

std::int64_t ModelProfile::total_bytes() const {
  return std::accumulate(layers.begin(), layers.end(), std::int64_t{0},
                         [](std::int64_t acc, const LayerSpec& l) { return acc + l.param_bytes; });
}

double ModelProfile::total_fp_time() const {
  double t = 0.0;
  for (const auto& l : layers) t += l.fp_time;
  return t;
}

double ModelProfile::total_bp_time() const {
  double t = 0.0;
  for (const auto& l : layers) t += l.bp_time;
  return t;
}

std::string_view to_string(Architecture arch) {
  switch (arch) {
    case Architecture::ParameterServer:
      return "ps";
    case Architecture::RingAllReduce:
      return "ring";
  }
  return "ps";
}

Architecture parse_architecture(std::string_view text) {
  if (text == "ps" || text == "ParameterServer" || text == "parameter_server") {
    return Architecture::ParameterServer;
  }
  if (text == "ring" || text == "RingAllReduce" || text == "allreduce" || text == "ring_allreduce") {
    return Architecture::RingAllReduce;
  }
  throw ParseError("unknown architecture '" + std::string(text) + "'");
}

bool ClusterSpec::homogeneous() const {
  if (compute_scale.empty()) return true;
  return std::all_of(compute_scale.begin(), compute_scale.end(),
                     [&](double s) { return s == compute_scale.front(); });
}

ClusterSpec ClusterSpec::uniform(int n_workers, Architecture arch) {
  ClusterSpec c;
  c.n_workers = n_workers;
  c.architecture = arch;
  c.compute_scale.assign(static_cast<std::size_t>(n_workers), 1.0);
  return c;
}

BandwidthTrace BandwidthTrace::constant(int n_workers, double gbps) {
  BandwidthTrace t;
  BandwidthSegment s;
  s.start_iteration = 0;
  s.up_gbps.assign(static_cast<std::size_t>(n_workers), gbps);
  s.down_gbps = s.up_gbps;
  t.segments.push_back(std::move(s));
  return t;
}

int active_jobs(const BandwidthTrace& trace, int iteration) {
  int jobs = 1;
  for (const auto& j : trace.jobs) {
    if (iteration >= j.active_from()) ++jobs;
  }
  return jobs;
}

namespace {

const BandwidthSegment& segment_at(const BandwidthTrace& trace, int iteration) {
  // Segments are sorted by start_iteration and the first starts at 0.
  auto it = std::upper_bound(trace.segments.begin(), trace.segments.end(), iteration,
                             [](int it_, const BandwidthSegment& s) { return it_ < s.start_iteration; });
  if (it == trace.segments.begin()) return trace.segments.front();
  return *std::prev(it);
}

double per_worker(const std::vector<double>& v, int worker) {
  return v.size() == 1 ? v.front() : v.at(static_cast<std::size_t>(worker));
}

// Milliseconds value that parses back (via / 1000) to exactly `s`.
double seconds_to_ms_exact(double s) {
  double ms = s * 1000.0;
  for (int i = 0; i < 4 && ms / 1000.0 != s; ++i) {
    ms = std::nextafter(ms, ms / 1000.0 < s ? INFINITY : -INFINITY);
  }
  return ms;
}

}  // namespace

LinkRate bandwidth_at(const BandwidthTrace& trace, int iteration, int worker) {
  const auto& seg = segment_at(trace, iteration);
  const double share = static_cast<double>(active_jobs(trace, iteration));
  return {per_worker(seg.up_gbps, worker) / share, per_worker(seg.down_gbps, worker) / share};
}

double compute_share_at(const BandwidthTrace& trace, int iteration) {
  return trace.jobs_share_compute ? static_cast<double>(active_jobs(trace, iteration)) : 1.0;
}

void validate(const ModelProfile& profile) {
  if (profile.layers.empty()) {
    throw ValidationError("profile '" + profile.name + "' has no layers");
  }
  if (profile.batch_size <= 0) {
    throw ValidationError("profile '" + profile.name + "' batch_size must be positive");
  }
  for (std::size_t i = 0; i < profile.layers.size(); ++i) {
    const auto& l = profile.layers[i];
    if (l.index != static_cast<int>(i)) {
      throw ValidationError("layer indices must be contiguous from 0");
    }
    if (l.param_bytes < 0) throw ValidationError("layer " + std::to_string(i) + ": negative param_bytes");
    if (!(l.fp_time >= 0.0) || !(l.bp_time >= 0.0) || !std::isfinite(l.fp_time) ||
        !std::isfinite(l.bp_time)) {
      throw ValidationError("layer " + std::to_string(i) + ": compute times must be finite and >= 0");
    }
  }
  if (profile.total_bytes() <= 0) {
    throw ValidationError("profile '" + profile.name + "' has no parameters");
  }
}

void validate(const ClusterSpec& cluster) {
  if (cluster.n_workers < 1) throw ValidationError("n_workers must be >= 1");
  if (!cluster.compute_scale.empty()) {
    if (static_cast<int>(cluster.compute_scale.size()) != cluster.n_workers) {
      throw ValidationError("compute_scale must have n_workers entries");
    }
    for (double s : cluster.compute_scale) {
      if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("compute_scale entries must be > 0");
    }
  }
}

void validate(const BandwidthTrace& trace, int n_workers) {
  if (trace.segments.empty()) throw ValidationError("trace has no segments");
  if (trace.segments.front().start_iteration != 0) {
    throw ValidationError("first trace segment must start at iteration 0");
  }
  for (std::size_t i = 0; i < trace.segments.size(); ++i) {
    const auto& s = trace.segments[i];
    if (i > 0 && s.start_iteration <= trace.segments[i - 1].start_iteration) {
      throw ValidationError("segment start iterations must be strictly increasing");
    }
    for (const auto* v : {&s.up_gbps, &s.down_gbps}) {
      if (v->size() != 1 && static_cast<int>(v->size()) != n_workers) {
        throw ValidationError("segment bandwidth vectors must have 1 or n_workers entries");
      }
      for (double g : *v) {
        if (!(g > 0.0) || !std::isfinite(g)) throw ValidationError("bandwidth values must be > 0");
      }
    }
  }
  for (const auto& j : trace.jobs) {
    if (j.arrive_iter < 0 || j.init_iters < 0) {
      throw ValidationError("competing job iterations must be non-negative");
    }
  }
}

ModelProfile parse_profile(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("profile: ") + e.what());
  }
  ModelProfile p;
  try {
    p.name = doc.at("name").get<std::string>();
    p.batch_size = doc.at("batch_size").get<int>();
    int index = 0;
    for (const auto& l : doc.at("layers")) {
      LayerSpec spec;
      spec.index = index++;
      spec.param_bytes = l.at("param_bytes").get<std::int64_t>();
      spec.fp_time = l.at("fp_time_ms").get<double>() / 1000.0;
      spec.bp_time = l.at("bp_time_ms").get<double>() / 1000.0;
      p.layers.push_back(spec);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("profile: ") + e.what());
  }
  validate(p);
  return p;
}

ModelProfile load_profile(const std::filesystem::path& path) {
  return parse_profile(read_text_file(path));
}

std::string serialize_profile(const ModelProfile& profile) {
  json doc;
  doc["name"] = profile.name;
  doc["batch_size"] = profile.batch_size;
  json layers = json::array();
  for (const auto& l : profile.layers) {
    layers.push_back({{"param_bytes", l.param_bytes},
                      {"fp_time_ms", seconds_to_ms_exact(l.fp_time)},
                      {"bp_time_ms", seconds_to_ms_exact(l.bp_time)}});
  }
  doc["layers"] = std::move(layers);
  return doc.dump(2) + "\n";
}

BandwidthTrace parse_trace(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
  BandwidthTrace t;
  try {
    for (const auto& s : doc.at("segments")) {
      BandwidthSegment seg;
      seg.start_iteration = s.at("start_iteration").get<int>();
      seg.up_gbps = s.at("up_gbps").get<std::vector<double>>();
      seg.down_gbps = s.at("down_gbps").get<std::vector<double>>();
      t.segments.push_back(std::move(seg));
    }
    if (doc.contains("jobs")) {
      for (const auto& j : doc.at("jobs")) {
        t.jobs.push_back({j.at("arrive_iter").get<int>(), j.at("init_iters").get<int>()});
      }
    }
    if (doc.contains("jobs_share_compute")) t.jobs_share_compute = doc.at("jobs_share_compute").get<bool>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
  if (t.segments.empty()) throw ValidationError("trace has no segments");
  validate(t, static_cast<int>(std::max(t.segments.front().up_gbps.size(), std::size_t{1})));
  return t;
}

BandwidthTrace load_trace(const std::filesystem::path& path) {
  return parse_trace(read_text_file(path));
}

std::string serialize_trace(const BandwidthTrace& trace) {
  json doc;
  json segs = json::array();
  for (const auto& s : trace.segments) {
    segs.push_back({{"start_iteration", s.start_iteration}, {"up_gbps", s.up_gbps}, {"down_gbps", s.down_gbps}});
  }
  doc["segments"] = std::move(segs);
  json jobs = json::array();
  for (const auto& j : trace.jobs) jobs.push_back({{"arrive_iter", j.arrive_iter}, {"init_iters", j.init_iters}});
  doc["jobs"] = std::move(jobs);
  doc["jobs_share_compute"] = trace.jobs_share_compute;
  return doc.dump(2) + "\n";
}

ClusterSpec parse_cluster(std::string_view json_text) {
  ClusterSpec c;
  try {
    const auto doc = json::parse(json_text);
    c.n_workers = doc.at("n_workers").get<int>();
    c.architecture = parse_architecture(doc.value("architecture", std::string("ps")));
    if (doc.contains("compute_scale")) {
      c.compute_scale = doc.at("compute_scale").get<std::vector<double>>();
    } else {
      c.compute_scale.assign(static_cast<std::size_t>(std::max(c.n_workers, 0)), 1.0);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("cluster: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace commsched
