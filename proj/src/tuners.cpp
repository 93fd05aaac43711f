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

#include "commsched/tuners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "commsched/gaussian_process.hpp"
#include "commsched/io.hpp"
#include "json.hpp"

namespace commsched {

using json = nlohmann::json;

SearchSpace SearchSpace::default_space() { return geometric(std::int64_t{1} << 12, std::int64_t{1} << 30, 16); }

SearchSpace SearchSpace::geometric(std::int64_t min_bytes, std::int64_t max_bytes, int max_credit) {
  SearchSpace s;
  for (std::int64_t b = min_bytes; b <= max_bytes; b *= 2) s.partition_grid.push_back(b);
  for (int c = 1; c <= max_credit; ++c) s.credit_grid.push_back(c);
  validate(s);
  return s;
}

std::vector<SchedulerConfig> SearchSpace::configs() const {
  std::vector<SchedulerConfig> out;
  out.reserve(size());
  for (auto b : partition_grid) {
    for (int c : credit_grid) out.push_back({b, c, true});
  }
  return out;
}

void validate(const SearchSpace& space) {
  if (space.partition_grid.empty() || space.credit_grid.empty()) {
    throw std::invalid_argument("search space must have at least one partition size and one credit");
  }
  if (!std::is_sorted(space.partition_grid.begin(), space.partition_grid.end()) ||
      std::adjacent_find(space.partition_grid.begin(), space.partition_grid.end()) != space.partition_grid.end()) {
    throw std::invalid_argument("partition grid must be strictly increasing");
  }
  if (!std::is_sorted(space.credit_grid.begin(), space.credit_grid.end()) ||
      std::adjacent_find(space.credit_grid.begin(), space.credit_grid.end()) != space.credit_grid.end()) {
    throw std::invalid_argument("credit grid must be strictly increasing");
  }
  for (auto b : space.partition_grid) validate(SchedulerConfig{b, 1, true});
  for (int c : space.credit_grid) validate(SchedulerConfig{space.partition_grid.front(), c, true});
}

bool tie_before(const SchedulerConfig& a, const SchedulerConfig& b) {
  if (a.partition_bytes != b.partition_bytes) return a.partition_bytes < b.partition_bytes;
  return a.credit_multiplier < b.credit_multiplier;
}

bool better(double speed_a, const SchedulerConfig& a, double speed_b, const SchedulerConfig& b) {
  if (speed_a != speed_b) return speed_a > speed_b;
  return tie_before(a, b);
}

namespace {

class Recorder {
 public:
  Recorder(std::string name, const Evaluator& eval, int cost) : eval_(eval), cost_(cost) {
    if (cost < 0) throw std::invalid_argument("cost per evaluation must be >= 0");
    report_.tuner = std::move(name);
  }

  double operator()(const SchedulerConfig& c) {
    double v = 0.0;
    try {
      v = eval_(c);
    } catch (const std::exception& e) {
      throw TunerError(report_.tuner + ": evaluator failed on " + format_config(c) + ": " + e.what(), finish());
    }
    if (!std::isfinite(v)) {
      throw TunerError(report_.tuner + ": evaluator returned a non-finite speed for " + format_config(c), finish());
    }
    report_.evaluations.push_back({c, v, cost_});
    report_.total_cost_iterations += cost_;
    return v;
  }

  TunerReport finish() const {
    TunerReport r = report_;
    bool first = true;
    for (const auto& e : r.evaluations) {
      if (first || better(e.speed, e.config, r.best_speed, r.best_config)) {
        r.best_speed = e.speed;
        r.best_config = e.config;
        first = false;
      }
    }
    return r;
  }

 private:
  const Evaluator& eval_;
  int cost_;
  TunerReport report_;
};

}  // namespace

TunerReport grid_search(const SearchSpace& space, const Evaluator& evaluator, int cost_per_eval) {
  validate(space);
  Recorder rec("grid", evaluator, cost_per_eval);
  for (const auto& c : space.configs()) rec(c);
  return rec.finish();
}

TunerReport bayes_opt(const SearchSpace& space, const Evaluator& evaluator, const BayesOptOptions& options) {
  validate(space);
  if (options.initial_points < 1) throw std::invalid_argument("BO needs at least one initial point");
  if (options.budget < options.initial_points) {
    throw std::invalid_argument("BO budget must be >= the number of initial points (" +
                                std::to_string(options.initial_points) + ")");
  }
  Recorder rec("bo", evaluator, options.cost_per_eval);

  const auto configs = space.configs();
  const auto n = static_cast<Eigen::Index>(configs.size());
  const double lo_p = std::log2(static_cast<double>(space.partition_grid.front()));
  const double hi_p = std::log2(static_cast<double>(space.partition_grid.back()));
  const double lo_c = space.credit_grid.front(), hi_c = space.credit_grid.back();
  Eigen::MatrixXd x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = std::log2(static_cast<double>(configs[static_cast<std::size_t>(i)].partition_bytes));
    const double c = configs[static_cast<std::size_t>(i)].credit_multiplier;
    x(i, 0) = hi_p > lo_p ? (p - lo_p) / (hi_p - lo_p) : 0.0;
    x(i, 1) = hi_c > lo_c ? (c - lo_c) / (hi_c - lo_c) : 0.0;
  }

  const int budget = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(options.budget), configs.size()));
  std::mt19937_64 rng(options.seed);
  std::vector<char> seen(configs.size(), 0);
  std::vector<Eigen::Index> picked;
  std::vector<double> ys;

  auto evaluate = [&](Eigen::Index i) {
    seen[static_cast<std::size_t>(i)] = 1;
    picked.push_back(i);
    ys.push_back(rec(configs[static_cast<std::size_t>(i)]));
  };
  auto random_unseen = [&]() {
    std::vector<Eigen::Index> pool;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!seen[static_cast<std::size_t>(i)]) pool.push_back(i);
    }
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  };

  const int n_init = std::min(options.initial_points, budget);
  for (int k = 0; k < n_init; ++k) evaluate(random_unseen());

  Eigen::VectorXd ls_grid(6);
  ls_grid << 0.05, 0.1, 0.2, 0.4, 0.8, 1.6;
  while (static_cast<int>(picked.size()) < budget) {
    const auto m = static_cast<Eigen::Index>(picked.size());
    Eigen::MatrixXd xs(m, 2);
    Eigen::VectorXd y(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      xs.row(k) = x.row(picked[static_cast<std::size_t>(k)]);
      y(k) = ys[static_cast<std::size_t>(k)];
    }
    const double range = y.maxCoeff() - y.minCoeff();
    GaussianProcess gp;
    // Degenerate observations (no spread) or a failed factorization: sample at random.
    if (!(range > 0.0) || !gp.fit_ml(xs, y, ls_grid, std::pow(0.01 * range, 2))) {
      evaluate(random_unseen());
      continue;
    }
    const double best = y.maxCoeff();
    Eigen::Index arg = -1;
    double best_ei = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (seen[static_cast<std::size_t>(i)]) continue;
      const auto pr = gp.predict(x.row(i).transpose());
      const double ei = expected_improvement(pr.mean, std::sqrt(pr.var), best);
      if (std::isfinite(ei) && ei > best_ei) {
        best_ei = ei;
        arg = i;
      }
    }
    evaluate(arg >= 0 ? arg : random_unseen());
  }
  return rec.finish();
}

double predict_mean_speed(const MetaNetParams& params, const RuntimeMetrics& metrics, const SchedulerConfig& config) {
  return forward(params, make_features(metrics, config)).mean();
}

MetaSelection meta_select(const MetaNetParams& params, const RuntimeMetrics& metrics, const SearchSpace& space) {
  validate(space);
  MetaSelection sel;
  sel.candidates = space.configs();
  const auto preds = forward_candidates(params, make_features(metrics, metrics.config), sel.candidates);
  sel.scores.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double s = preds[i].mean();
    sel.scores.push_back(s);
    if (i == 0 || better(s, sel.candidates[i], sel.predicted_best, sel.best)) {
      sel.predicted_best = s;
      sel.best = sel.candidates[i];
    }
  }
  return sel;
}

TunerReport meta_report(const MetaSelection& selection) {
  TunerReport r;
  r.tuner = "meta";
  r.best_config = selection.best;
  r.best_speed = selection.predicted_best;
  r.inferences = 1;
  for (std::size_t i = 0; i < selection.candidates.size(); ++i) {
    r.evaluations.push_back({selection.candidates[i], selection.scores[i], 0});
  }
  return r;
}

std::string report_to_json(const TunerReport& report) {
  json j;
  j["tuner"] = report.tuner;
  j["best_config"] = format_config(report.best_config);
  j["best_partition_bytes"] = report.best_config.partition_bytes;
  j["best_credit"] = report.best_config.credit_multiplier;
  j["best_speed"] = report.best_speed;
  j["total_cost_iterations"] = report.total_cost_iterations;
  j["inferences"] = report.inferences;
  json evals = json::array();
  for (const auto& e : report.evaluations) {
    evals.push_back({{"config", format_config(e.config)},
                     {"partition_bytes", e.config.partition_bytes},
                     {"credit", e.config.credit_multiplier},
                     {"speed", e.speed},
                     {"cost_iterations", e.cost_iterations}});
  }
  j["evaluations"] = std::move(evals);
  return j.dump(2);
}

std::string report_to_csv(const TunerReport& report) {
  std::ostringstream os;
  os << "config,partition_bytes,credit,speed,cumulative_cost\n";
  long cum = 0;
  for (const auto& e : report.evaluations) {
    cum += e.cost_iterations;
    os << format_config(e.config) << ',' << e.config.partition_bytes << ',' << e.config.credit_multiplier << ','
       << format_double(e.speed) << ',' << cum << '\n';
  }
  return os.str();
}

}  // namespace commsched
