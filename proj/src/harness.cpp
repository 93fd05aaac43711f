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

#include "commsched/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "commsched/io.hpp"
#include "json.hpp"

namespace commsched {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(TunerKind kind) {
  switch (kind) {
    case TunerKind::None: return "none";
    case TunerKind::Fixed: return "fixed";
    case TunerKind::Grid: return "grid";
    case TunerKind::Bo: return "bo";
    case TunerKind::Meta: return "meta";
  }
  return "?";
}

TunerKind parse_tuner(std::string_view text) {
  if (text == "none" || text == "baseline") return TunerKind::None;
  if (text == "fixed") return TunerKind::Fixed;
  if (text == "grid") return TunerKind::Grid;
  if (text == "bo") return TunerKind::Bo;
  if (text == "meta" || text == "autobyte") return TunerKind::Meta;
  throw HarnessError("unknown tuner '" + std::string(text) + "' (expected none, fixed, grid, bo or meta)");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& what) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return it.key() == a; })) {
      throw HarnessError(what + ": unknown key '" + it.key() + "'");
    }
  }
}

// A file reference or an inline object.
std::string inline_or_file(const json& v, const fs::path& base) {
  if (v.is_string()) return read_text_file(resolve(base, v.get<std::string>()));
  if (v.is_object()) return v.dump();
  throw HarnessError("expected a path or an inline object");
}

SearchSpace parse_space(const json& v) {
  reject_unknown(v, {"min_bytes", "max_bytes", "max_credit", "partition_grid", "credit_grid"}, "space");
  SearchSpace s;
  if (v.contains("partition_grid")) {
    s.partition_grid = v.at("partition_grid").get<std::vector<std::int64_t>>();
  } else {
    const auto lo = v.value("min_bytes", std::int64_t{1} << 12);
    const auto hi = v.value("max_bytes", std::int64_t{1} << 30);
    if (lo <= 0 || hi < lo) throw HarnessError("space: need 0 < min_bytes <= max_bytes");
    for (auto b = lo; b <= hi; b *= 2) s.partition_grid.push_back(b);
  }
  if (v.contains("credit_grid")) {
    s.credit_grid = v.at("credit_grid").get<std::vector<int>>();
  } else {
    const int mc = v.value("max_credit", 16);
    for (int c = 1; c <= mc; ++c) s.credit_grid.push_back(c);
  }
  validate(s);
  return s;
}

SimOptions parse_sim_options(const json& doc) {
  SimOptions o;
  if (doc.contains("chunk_overhead_us")) {
    o.chunk_overhead_s = doc.at("chunk_overhead_us").get<double>() * 1e-6;
    if (!(o.chunk_overhead_s >= 0.0)) throw HarnessError("chunk_overhead_us must be >= 0");
  }
  return o;
}

template <typename F>
auto with_context(const std::string& ctx, F&& f) {
  try {
    return f();
  } catch (const HarnessError&) {
    throw;
  } catch (const std::exception& e) {
    throw HarnessError(ctx + ": " + e.what());
  }
}

}  // namespace

Scenario parse_scenario(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw HarnessError(std::string("scenario: ") + e.what());
  }
  return with_context("scenario", [&] {
    reject_unknown(doc,
                   {"name", "profile", "cluster", "trace", "tuner", "n_iters", "seed", "initial_config", "params",
                    "space", "eval_iters", "bo_budget", "measure", "fine_group", "record_events",
                    "chunk_overhead_us", "controller"},
                   "scenario");
    Scenario s;
    s.name = doc.value("name", std::string("scenario"));
    s.profile = parse_profile(inline_or_file(doc.at("profile"), base_dir));
    s.cluster = parse_cluster(inline_or_file(doc.at("cluster"), base_dir));
    s.trace = doc.contains("trace") ? parse_trace(inline_or_file(doc.at("trace"), base_dir))
                                    : BandwidthTrace::constant(s.cluster.n_workers, 10.0);
    validate(s.trace, s.cluster.n_workers);
    s.tuner = parse_tuner(doc.value("tuner", std::string("none")));
    s.n_iters = doc.value("n_iters", 60);
    s.seed = doc.value("seed", std::uint64_t{1});
    if (doc.contains("initial_config")) s.initial_config = parse_config(doc.at("initial_config").get<std::string>());
    if (doc.contains("params")) s.params = load_checkpoint(resolve(base_dir, doc.at("params").get<std::string>()));
    if (doc.contains("space")) s.space = parse_space(doc.at("space"));
    s.eval_iters = doc.value("eval_iters", 10);
    s.bo_budget = doc.value("bo_budget", 15);
    if (doc.contains("measure")) {
      const auto m = doc.at("measure").get<std::vector<int>>();
      if (m.size() != 2) throw HarnessError("measure must be [from, to]");
      s.measure_from = m[0];
      s.measure_to = m[1];
    }
    s.fine_group = doc.value("fine_group", 5);
    s.record_events = doc.value("record_events", false);
    s.sim = parse_sim_options(doc);
    if (doc.contains("controller")) {
      const auto& c = doc.at("controller");
      reject_unknown(c,
                     {"drift_threshold", "gain_threshold", "gain_vs_observed", "restart_penalty_iterations",
                      "buffer_capacity", "group_size", "adapt_steps", "adapt_lr", "adapt_head_only"},
                     "controller");
      auto& o = s.controller;
      o.trigger.drift_threshold = c.value("drift_threshold", o.trigger.drift_threshold);
      o.trigger.gain_threshold = c.value("gain_threshold", o.trigger.gain_threshold);
      o.trigger.gain_vs_observed = c.value("gain_vs_observed", o.trigger.gain_vs_observed);
      o.restart_penalty_iterations = c.value("restart_penalty_iterations", o.restart_penalty_iterations);
      o.buffer_capacity = c.value("buffer_capacity", o.buffer_capacity);
      o.group_size = c.value("group_size", o.group_size);
      o.adapt.steps = c.value("adapt_steps", o.adapt.steps);
      o.adapt.lr = c.value("adapt_lr", o.adapt.lr);
      o.adapt.head_only = c.value("adapt_head_only", o.adapt.head_only);
    }
    s.controller.trigger.space = s.space;
    s.controller.sim = s.sim;

    if (s.n_iters < 20) throw HarnessError("n_iters must be >= 20");
    if (s.eval_iters < 2) throw HarnessError("eval_iters must be >= 2");
    if (s.bo_budget < 3) throw HarnessError("bo_budget must be >= 3");
    if (s.measure_from < 0 || s.measure_to <= s.measure_from) throw HarnessError("measure window is empty");
    if (s.fine_group < 1) throw HarnessError("fine_group must be >= 1");
    validate(s.initial_config);
    if (s.tuner == TunerKind::Meta && !s.params) throw HarnessError("tuner=meta needs a params checkpoint");
    return s;
  });
}

Scenario load_scenario(const fs::path& path) {
  return with_context(path.string(), [&] { return parse_scenario(read_text_file(path), path.parent_path()); });
}

double evaluate_config(const Scenario& scenario, const SchedulerConfig& config) {
  const auto sim =
      simulate_iterations(scenario.profile, scenario.cluster, config, scenario.trace, scenario.eval_iters, 0, scenario.sim);
  return sim.speed(1, sim.iterations.size());
}

namespace {

RunRecord fixed_run(const Scenario& s, const SchedulerConfig& config) {
  SimOptions o = s.sim;
  o.record_events = s.record_events;
  RunRecord rec;
  rec.sim = simulate_iterations(s.profile, s.cluster, config, s.trace, s.n_iters, 0, o);
  const int gs = s.controller.group_size;
  for (int start = 0, g = 0; start < s.n_iters; start += gs, ++g) {
    const int count = std::min(gs, s.n_iters - start);
    GroupRecord r;
    r.group = g;
    r.iter_start = start;
    r.iter_count = count;
    r.config = config;
    r.next_config = config;
    r.observed_speed = rec.sim.speed(static_cast<std::size_t>(start), static_cast<std::size_t>(start + count));
    rec.groups.push_back(r);
  }
  return rec;
}

}  // namespace

ScenarioResult execute_scenario(const Scenario& s) {
  return with_context("scenario '" + s.name + "'", [&] {
    ScenarioResult out;
    switch (s.tuner) {
      case TunerKind::None:
        out.record = fixed_run(s, SchedulerConfig::baseline());
        break;
      case TunerKind::Fixed:
        out.record = fixed_run(s, s.initial_config);
        break;
      case TunerKind::Grid:
      case TunerKind::Bo: {
        const Evaluator eval = [&](const SchedulerConfig& c) { return evaluate_config(s, c); };
        if (s.tuner == TunerKind::Grid) {
          out.tuner_report = grid_search(s.space, eval, s.eval_iters);
        } else {
          BayesOptOptions o;
          o.budget = s.bo_budget;
          o.seed = s.seed;
          o.cost_per_eval = s.eval_iters;
          out.tuner_report = bayes_opt(s.space, eval, o);
        }
        out.tuner_cost_iterations = out.tuner_report->total_cost_iterations;
        out.record = fixed_run(s, out.tuner_report->best_config);
        break;
      }
      case TunerKind::Meta: {
        ControllerOptions o = s.controller;
        o.sim.record_events = s.record_events;
        out.record = run_autobyte(s.profile, s.cluster, s.trace, s.initial_config, *s.params, s.n_iters, o);
        break;
      }
    }
    const auto& its = out.record.sim.iterations;
    for (const auto& it : its) {
      if (out.configs_used.empty() || out.configs_used.back().second != it.config) {
        out.configs_used.emplace_back(it.iteration, it.config);
      }
    }
    out.mean_speed = out.record.sim.speed(static_cast<std::size_t>(s.measure_from), static_cast<std::size_t>(s.measure_to));
    return out;
  });
}

std::string summary_json(const Scenario& s, const ScenarioResult& r) {
  json j;
  j["scenario"] = s.name;
  j["tuner"] = std::string(to_string(s.tuner));
  j["model"] = s.profile.name;
  j["n_workers"] = s.cluster.n_workers;
  j["n_iters"] = s.n_iters;
  j["seed"] = s.seed;
  j["measure"] = {s.measure_from, std::min(s.measure_to, s.n_iters)};
  j["mean_speed"] = r.mean_speed;
  json used = json::array();
  for (const auto& [it, c] : r.configs_used) used.push_back({{"from_iteration", it}, {"config", format_config(c)}});
  j["configs_used"] = std::move(used);
  j["tuner_cost_iterations"] = r.tuner_cost_iterations;
  j["inferences"] = r.record.inferences;
  j["adaptations"] = r.record.adaptations;
  j["reconfigurations"] = r.record.reconfig_log.size();
  return j.dump(2) + "\n";
}

std::string fine_csv(const SimResult& sim, int group) {
  std::ostringstream os;
  os << "group,iter_start,S_p,S_c,observed_speed\n";
  const auto n = sim.iterations.size();
  for (std::size_t start = 0, g = 0; start < n; start += static_cast<std::size_t>(group), ++g) {
    const auto end = std::min(n, start + static_cast<std::size_t>(group));
    const auto& c = sim.iterations[end - 1].config;
    const std::string sp = c.scheduling_enabled ? std::to_string(c.partition_bytes) : "baseline";
    const std::string sc = c.scheduling_enabled ? std::to_string(c.credit_multiplier) : "baseline";
    os << g << ',' << start << ',' << sp << ',' << sc << ',' << format_double(sim.speed(start, end)) << '\n';
  }
  return os.str();
}

ScenarioResult run_scenario(const Scenario& s, const fs::path& out_dir) {
  auto r = execute_scenario(s);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  write_text_file(out_dir / "summary.json", summary_json(s, r));
  write_text_file(out_dir / "run_record.csv", run_record_csv(r.record));
  write_text_file(out_dir / "run_record_fine.csv", fine_csv(r.record.sim, s.fine_group));
  write_text_file(out_dir / "reconfig_log.json", reconfig_log_json(r.record.reconfig_log) + "\n");
  if (r.tuner_report) write_text_file(out_dir / "tuner_report.json", report_to_json(*r.tuner_report) + "\n");
  if (s.record_events) {
    std::ofstream ev(out_dir / "events.jsonl", std::ios::binary | std::ios::trunc);
    if (!ev) throw IoError("cannot write events.jsonl");
    for (const auto& e : r.record.sim.event_log()) {
      ev << json{{"t", e.t}, {"kind", std::string(to_string(e.kind))}, {"iteration", e.iteration},
                 {"worker", e.worker}, {"layer", e.layer}, {"seq", e.seq}}
                .dump()
         << '\n';
    }
  }
  return r;
}

CollectSpec parse_collect_spec(std::string_view json_text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw HarnessError(std::string("collect spec: ") + e.what());
  }
  return with_context("collect spec", [&] {
    reject_unknown(doc,
                   {"profiles", "cluster", "traces", "space", "n_iters", "group_size", "configs_per_env", "seed",
                    "chunk_overhead_us"},
                   "collect spec");
    CollectSpec s;
    for (const auto& p : doc.at("profiles")) s.profiles.push_back(parse_profile(inline_or_file(p, base_dir)));
    if (s.profiles.empty()) throw HarnessError("no profiles");
    s.cluster = parse_cluster(inline_or_file(doc.at("cluster"), base_dir));
    for (const auto& t : doc.at("traces")) {
      reject_unknown(t, {"name", "trace"}, "traces[]");
      auto trace = parse_trace(inline_or_file(t.at("trace"), base_dir));
      validate(trace, s.cluster.n_workers);
      s.traces.emplace_back(t.at("name").get<std::string>(), std::move(trace));
    }
    if (s.traces.empty()) throw HarnessError("no traces");
    if (doc.contains("space")) s.space = parse_space(doc.at("space"));
    s.n_iters = doc.value("n_iters", s.n_iters);
    s.group_size = doc.value("group_size", s.group_size);
    s.configs_per_env = doc.value("configs_per_env", 0);
    s.seed = doc.value("seed", std::uint64_t{1});
    s.sim = parse_sim_options(doc);
    if (s.group_size < 1 || s.n_iters < s.group_size) throw HarnessError("need n_iters >= group_size >= 1");
    if (s.configs_per_env < 0) throw HarnessError("configs_per_env must be >= 0");
    return s;
  });
}

CollectSpec load_collect_spec(const fs::path& path) {
  return with_context(path.string(), [&] { return parse_collect_spec(read_text_file(path), path.parent_path()); });
}

std::vector<TrainingSample> collect_samples(const CollectSpec& spec) {
  std::vector<TrainingSample> out;
  std::mt19937_64 rng(spec.seed);
  const auto all = spec.space.configs();
  for (const auto& profile : spec.profiles) {
    for (const auto& [name, trace] : spec.traces) {
      std::vector<SchedulerConfig> configs = all;
      if (spec.configs_per_env > 0 && static_cast<std::size_t>(spec.configs_per_env) < configs.size()) {
        std::shuffle(configs.begin(), configs.end(), rng);
        configs.resize(static_cast<std::size_t>(spec.configs_per_env));
        std::sort(configs.begin(), configs.end(), tie_before);
      }
      for (const auto& c : configs) {
        const auto sim = simulate_iterations(profile, spec.cluster, c, trace, spec.n_iters, 0, spec.sim);
        for (const auto& m : group_metrics(sim, spec.group_size)) {
          auto s = make_sample(m);
          s.env = profile.name + "/" + name + "/" + std::to_string(m.iter_start);
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

std::size_t collect_dataset(const CollectSpec& spec, const fs::path& out) {
  const auto samples = collect_samples(spec);
  std::string text;
  for (const auto& s : samples) {
    text += serialize_sample(s);
    text += '\n';
  }
  write_text_file(out, text);
  return samples.size();
}

std::vector<CompareRow> compare_tuners(const Scenario& s, const std::vector<TunerKind>& tuners) {
  std::vector<CompareRow> rows;
  const Evaluator eval = [&](const SchedulerConfig& c) { return evaluate_config(s, c); };
  for (auto kind : tuners) {
    CompareRow row;
    row.tuner = std::string(to_string(kind));
    const auto t0 = std::chrono::steady_clock::now();
    with_context("compare " + row.tuner, [&] {
      switch (kind) {
        case TunerKind::Grid:
        case TunerKind::Bo: {
          TunerReport rep;
          if (kind == TunerKind::Grid) {
            rep = grid_search(s.space, eval, s.eval_iters);
          } else {
            BayesOptOptions o;
            o.budget = s.bo_budget;
            o.seed = s.seed;
            o.cost_per_eval = s.eval_iters;
            rep = bayes_opt(s.space, eval, o);
          }
          row.best_config = rep.best_config;
          row.best_speed = rep.best_speed;
          row.cost_iterations = rep.total_cost_iterations;
          row.evaluations = static_cast<int>(rep.evaluations.size());
          break;
        }
        case TunerKind::Meta: {
          if (!s.params) throw HarnessError("tuner=meta needs a params checkpoint");
          // Runtime metrics from one group with the initial config (warm-up
          // iteration skipped). Charged as search cost, conservatively.
          const int g = std::max(2, s.controller.group_size);
          const auto sim = simulate_iterations(s.profile, s.cluster, s.initial_config, s.trace, g, 0, s.sim);
          const auto sel = meta_select(*s.params, collect_metrics(sim, 1, static_cast<std::size_t>(g - 1)), s.space);
          row.best_config = sel.best;
          row.predicted_speed = sel.predicted_best * s.cluster.n_workers;
          row.best_speed = evaluate_config(s, sel.best);
          row.cost_iterations = g;
          row.inferences = 1;
          break;
        }
        case TunerKind::None:
        case TunerKind::Fixed: {
          row.best_config = kind == TunerKind::None ? SchedulerConfig::baseline() : s.initial_config;
          row.best_speed = evaluate_config(s, row.best_config);
          break;
        }
      }
      return 0;
    });
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  return rows;
}

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "tuner,best_config,S_p,S_c,best_speed,predicted_speed,cost_iterations,evaluations,inferences\n";
  for (const auto& r : rows) {
    os << r.tuner << ',' << format_config(r.best_config) << ',' << r.best_config.partition_bytes << ','
       << r.best_config.credit_multiplier << ',' << format_double(r.best_speed) << ','
       << format_double(r.predicted_speed) << ',' << r.cost_iterations << ',' << r.evaluations << ','
       << r.inferences << '\n';
  }
  return os.str();
}

}  // namespace commsched
