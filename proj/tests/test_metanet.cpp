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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "commsched/metanet.hpp"
#include "gradcheck.hpp"

using namespace commsched;

namespace {

FeatureVector random_features(std::mt19937_64& rng, int l, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureVector f;
  f.n_layers = l;
  f.n_workers = n;
  f.model = u(rng) < 0.5 ? "alpha" : "beta";
  f.architecture = u(rng) < 0.5 ? "ps" : "ring";
  f.t_seq.assign(static_cast<std::size_t>(l), std::vector<double>(static_cast<std::size_t>(n)));
  for (auto& row : f.t_seq) {
    for (auto& t : row) t = 1e-3 * (0.2 + 5 * u(rng));
  }
  for (int w = 0; w < n; ++w) {
    f.b_down.push_back(0.5 + 20 * u(rng));
    f.b_up.push_back(0.5 + 20 * u(rng));
  }
  f.partition_bytes = std::int64_t{4096} << (rng() % 19);
  f.credit = 1 + static_cast<int>(rng() % 16);
  return f;
}

MetaNetParams tiny_params(std::uint64_t seed, int n_max = 4) {
  MetaNetDims d;
  d.d_e = 4;
  d.hidden = 4;
  d.dense = 6;
  d.embed = 3;
  d.n_max = n_max;
  auto p = MetaNetParams::init(d, {"alpha", "beta"}, {"ps", "ring"}, seed);
  p.norm.log_t_mean = std::log(2e-3);
  p.norm.log_t_std = 0.8;
  p.norm.log_b_mean = std::log(5.0);
  p.norm.log_b_std = 1.2;
  p.norm.compute_ref = 0.01;
  p.norm.label_scale = 100.0;
  return p;
}

}  // namespace

TEST_CASE("zero network predicts zero") {
  std::mt19937_64 rng(1);
  const auto p = MetaNetParams::init({}, {"alpha"}, {"ps"}, 3).zeros_like();
  const auto v = forward(p, random_features(rng, 5, 8));
  CHECK(v.size() == 8);
  CHECK(v.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("worker permutation permutes the prediction exactly") {
  std::mt19937_64 rng(2);
  for (int n : {4, 16, 5}) {
    const auto p = MetaNetParams::init({}, {"alpha", "beta"}, {"ps", "ring"}, 10 + n);
    auto f = random_features(rng, 6, n);
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureVector g = f;
    for (int w = 0; w < n; ++w) {
      g.b_down[w] = f.b_down[perm[w]];
      g.b_up[w] = f.b_up[perm[w]];
      for (int i = 0; i < f.n_layers; ++i) g.t_seq[i][w] = f.t_seq[i][perm[w]];
    }
    const auto a = forward(p, f);
    const auto b = forward(p, g);
    for (int w = 0; w < n; ++w) CHECK(b(w) == a(perm[w]));
  }
}

TEST_CASE("padding truncates to n_max") {
  std::mt19937_64 rng(4);
  const auto p = tiny_params(1, 4);
  CHECK(forward(p, random_features(rng, 3, 7)).size() == 4);
}

TEST_CASE("forward is deterministic and validates shapes") {
  std::mt19937_64 rng(3);
  const auto p = MetaNetParams::init({}, {"alpha"}, {"ps"}, 5);
  const auto f = random_features(rng, 4, 3);
  CHECK(forward(p, f) == forward(p, f));
  auto bad = f;
  bad.b_down.pop_back();
  CHECK_THROWS_AS(forward(p, bad), MetaNetError);
  bad = f;
  bad.t_seq.pop_back();
  CHECK_THROWS_AS(forward(p, bad), MetaNetError);
}

TEST_CASE("loss is the euclidean norm") {
  Eigen::VectorXd a(2), b(2);
  a << 3, 4;
  b << 0, 0;
  CHECK(loss(a, b) == 5.0);
  CHECK(loss(a, a) == 0.0);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x(7), y(7);
    double ss = 0.0;
    for (int i = 0; i < 7; ++i) {
      x(i) = nd(rng);
      y(i) = nd(rng);
      ss += (x(i) - y(i)) * (x(i) - y(i));
    }
    CHECK(loss(x, y) == doctest::Approx(std::sqrt(ss)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(loss(Eigen::VectorXd(2), Eigen::VectorXd(3)), MetaNetError);
}

TEST_CASE("gradients match central finite differences") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const auto p = tiny_params(seed);
    TrainingSample s;
    s.features = random_features(rng, 3, 2);
    s.label = {80.0 + 40.0 * (rng() % 100) / 100.0, 60.0 + 40.0 * (rng() % 100) / 100.0};
    worst = std::max(worst, gradcheck::max_relative_error(p, s, 1e-5));
  }
  MESSAGE("max relative error over 20 seeds: " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("zero residual gives zero gradient") {
  std::mt19937_64 rng(12);
  const auto p = tiny_params(7);
  TrainingSample s;
  s.features = random_features(rng, 3, 2);
  const auto v = forward(p, s.features);
  s.label = {v(0), v(1)};
  Gradients g;
  CHECK(backward(p, s, g) < 1e-24);
  for (const auto& t : g) CHECK(t.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("output-bias gradient is linear in the label at zero weights") {
  std::mt19937_64 rng(13);
  const auto p = tiny_params(8).zeros_like();
  TrainingSample s;
  s.features = random_features(rng, 3, 2);
  s.label = {50.0, 70.0};
  Gradients g1, g3;
  backward(p, s, g1);
  s.label = {150.0, 210.0};
  backward(p, s, g3);
  const double b1 = g1[MetaNetParams::kDense2B](0, 0), b3 = g3[MetaNetParams::kDense2B](0, 0);
  CHECK(b1 < 0.0);
  CHECK(b3 == doctest::Approx(3.0 * b1).epsilon(1e-14));
}

TEST_CASE("memorizes a single repeated sample") {
  std::mt19937_64 rng(14);
  TrainingSample s;
  s.features = random_features(rng, 4, 2);
  s.label = {120.0, 95.0};
  const std::vector<TrainingSample> data(64, s);
  TrainOptions o;
  o.epochs = 300;
  o.lr = 3e-3;
  o.batch_size = 64;
  const auto res = train_offline(data, o);
  CHECK(res.epoch_loss.back() < 1e-4 * res.initial_loss);
  const auto v = forward(res.params, s.features);
  CHECK(v(0) == doctest::Approx(120.0).epsilon(0.01));
  CHECK(v(1) == doctest::Approx(95.0).epsilon(0.01));
}

TEST_CASE("learns a linear teacher") {
  std::mt19937_64 rng(15);
  std::vector<TrainingSample> data;
  auto teacher = [](const FeatureVector& f, int w) {
    return 200.0 + 30.0 * std::log2(static_cast<double>(f.partition_bytes)) / 10.0 + 8.0 * f.credit +
           4.0 * f.b_down[w] + 2.0 * f.b_up[w];
  };
  for (int i = 0; i < 2000; ++i) {
    TrainingSample s;
    s.features = random_features(rng, 4, 2);
    s.features.model = "alpha";
    s.features.architecture = "ps";
    for (auto& row : s.features.t_seq) row.assign(2, 2e-3);
    for (int w = 0; w < 2; ++w) s.label.push_back(teacher(s.features, w));
    data.push_back(std::move(s));
  }
  TrainOptions o;
  o.epochs = 60;
  o.seed = 3;
  const auto res = train_offline(std::vector<TrainingSample>(data.begin(), data.begin() + 1800), o);
  CHECK(res.epoch_loss.back() < res.initial_loss);
  double worst = 0.0, sum = 0.0;
  int cnt = 0;
  for (std::size_t i = 1800; i < data.size(); ++i) {
    const auto v = forward(res.params, data[i].features);
    for (int w = 0; w < 2; ++w) {
      const double e = std::abs(v(w) - data[i].label[w]) / data[i].label[w];
      worst = std::max(worst, e);
      sum += e;
      ++cnt;
    }
  }
  MESSAGE("linear teacher held-out relative error: mean " << sum / cnt << ", max " << worst);
  CHECK(sum / cnt < 0.02);
}

TEST_CASE("training is reproducible and rejects bad input") {
  std::mt19937_64 rng(16);
  std::vector<TrainingSample> data;
  for (int i = 0; i < 100; ++i) {
    TrainingSample s;
    s.features = random_features(rng, 3, 2);
    s.label = {100.0 + i, 90.0 + i};
    data.push_back(std::move(s));
  }
  TrainOptions o;
  o.epochs = 3;
  const auto a = train_offline(data, o);
  const auto b = train_offline(data, o);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(serialize_checkpoint(a.params) == serialize_checkpoint(b.params));
  CHECK_THROWS_AS(train_offline({}, o), MetaNetError);
  auto bad = data;
  bad[0].label[0] = std::nan("");
  CHECK_THROWS_AS(train_offline(bad, o), MetaNetError);
  TrainOptions wild = o;
  wild.lr = 1e300;
  wild.epochs = 5;
  CHECK_THROWS_AS(train_offline(data, wild), MetaNetError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  std::mt19937_64 rng(17);
  const auto p = MetaNetParams::init({}, {"alexnet", "vgg16"}, {"ps"}, 99);
  const auto path = std::filesystem::temp_directory_path() / "commsched_ckpt_test.json";
  save_checkpoint(p, path);
  const auto q = load_checkpoint(path);
  CHECK(q.dims == p.dims);
  CHECK(q.norm == p.norm);
  CHECK(q.model_vocab == p.model_vocab);
  for (int t = 0; t < MetaNetParams::kNumTensors; ++t) CHECK(q.tensors[t] == p.tensors[t]);
  for (int k = 0; k < 10; ++k) {
    const auto f = random_features(rng, 5, 8);
    CHECK(forward(p, f) == forward(q, f));
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(parse_checkpoint("{}"), MetaNetError);
  CHECK_THROWS_AS(parse_checkpoint("not json"), MetaNetError);
}

TEST_CASE("dataset lines round trip") {
  std::mt19937_64 rng(18);
  TrainingSample s;
  s.features = random_features(rng, 3, 2);
  s.label = {1.5, 2.25};
  s.env = "e1";
  s.iter_start = 30;
  const auto back = parse_sample(serialize_sample(s));
  CHECK(back.features.t_seq == s.features.t_seq);
  CHECK(back.features.b_down == s.features.b_down);
  CHECK(back.features.partition_bytes == s.features.partition_bytes);
  CHECK(back.label == s.label);
  CHECK(back.env == "e1");
  CHECK_THROWS_AS(parse_sample(R"({"model":"x"})"), ParseError);
}

TEST_CASE("online adaptation") {
  std::mt19937_64 rng(19);
  std::vector<TrainingSample> data;
  auto teacher = [](const FeatureVector& f) {
    return 300.0 + 10.0 * f.credit - 4.0 * std::abs(std::log2(static_cast<double>(f.partition_bytes)) - 21.0);
  };
  for (int i = 0; i < 600; ++i) {
    TrainingSample s;
    s.features = random_features(rng, 4, 2);
    s.features.model = "alpha";
    for (auto& row : s.features.t_seq) row.assign(2, 3e-3);
    s.label.assign(2, teacher(s.features));
    data.push_back(std::move(s));
  }
  TrainOptions o;
  o.epochs = 40;
  const auto base = train_offline(data, o).params;
  const std::vector<TrainingSample> recent(data.end() - 32, data.end());

  SUBCASE("zero steps is a no-op") {
    AdaptOptions a;
    a.steps = 0;
    CHECK(serialize_checkpoint(adapt_online(base, recent, a)) == serialize_checkpoint(base));
  }
  SUBCASE("no drift: parameters barely move, encoder frozen, loss does not rise") {
    const auto after = adapt_online(base, recent);
    double diff = 0.0;
    for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
      diff += (after.tensors[t] - base.tensors[t]).squaredNorm();
      if (!MetaNetParams::is_head(t)) CHECK(after.tensors[t] == base.tensors[t]);
    }
    MESSAGE("relative parameter change without drift: " << std::sqrt(diff) / base.norm_l2());
    CHECK(std::sqrt(diff) < 0.01 * base.norm_l2());
    CHECK(mean_objective(after, recent) <= mean_objective(base, recent));
  }
  SUBCASE("labels halved: error falls under the drift threshold") {
    auto drifted = recent;
    for (auto& s : drifted) {
      for (auto& y : s.label) y *= 0.5;
    }
    auto rel_err = [&](const MetaNetParams& p) {
      double worst = 0.0;
      for (const auto& s : drifted) {
        const auto v = forward(p, s.features);
        for (int w = 0; w < 2; ++w) worst = std::max(worst, std::abs(v(w) - s.label[w]) / s.label[w]);
      }
      return worst;
    };
    const double before = rel_err(base);
    const auto after = adapt_online(base, drifted);
    MESSAGE("drifted error before " << before << ", after " << rel_err(after));
    CHECK(before > 0.5);
    CHECK(rel_err(after) < 0.10);
    for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
      if (!MetaNetParams::is_head(t)) CHECK(after.tensors[t] == base.tensors[t]);
    }
  }
  SUBCASE("needs samples") { CHECK_THROWS_AS(adapt_online(base, {}), MetaNetError); }
}
