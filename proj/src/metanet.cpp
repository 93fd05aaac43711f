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

#include "commsched/metanet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "commsched/io.hpp"
#include "json.hpp"

namespace commsched {

using json = nlohmann::json;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kMinTime = 1e-12;
const char* const kUnknown = "<unk>";

// Order-independent mean: summing sorted values makes worker permutations
// bit-exact.
double sorted_mean(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmStep {
  VectorXd in, h_prev, c_prev, i, f, g, o, c, tc, h;
};

struct EncoderTrace {
  std::vector<Eigen::Vector3d> rows;
  std::vector<LstmStep> s0, s1;
  VectorXd enc;
};

int valid_workers(const MetaNetParams& p, const FeatureVector& f) { return std::min(f.n_workers, p.dims.n_max); }

void check_shapes(const MetaNetParams& p, const FeatureVector& f) {
  if (p.tensors.size() != MetaNetParams::kNumTensors) throw MetaNetError("params are not initialized");
  if (f.n_workers < 1 || f.n_layers < 1) throw MetaNetError("features need n >= 1 and l >= 1");
  if (static_cast<int>(f.t_seq.size()) != f.n_layers) throw MetaNetError("T has the wrong number of layers");
  for (const auto& row : f.t_seq) {
    if (static_cast<int>(row.size()) != f.n_workers) throw MetaNetError("T row has the wrong number of workers");
  }
  if (static_cast<int>(f.b_down.size()) != f.n_workers || static_cast<int>(f.b_up.size()) != f.n_workers) {
    throw MetaNetError("bandwidth vectors must have n entries");
  }
}

double std_log_t(const Normalization& nm, double t) {
  return (std::log(std::max(t, kMinTime)) - nm.log_t_mean) / nm.log_t_std;
}

double std_log_b(const Normalization& nm, double b) {
  return (std::log(std::max(b, 1e-9)) - nm.log_b_mean) / nm.log_b_std;
}

void lstm_forward(const MatrixXd& wx, const MatrixXd& wh, const MatrixXd& b, const std::vector<VectorXd>& inputs,
                  int h, std::vector<LstmStep>& steps) {
  steps.resize(inputs.size());
  VectorXd hp = VectorXd::Zero(h), cp = VectorXd::Zero(h);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& s = steps[t];
    s.in = inputs[t];
    s.h_prev = hp;
    s.c_prev = cp;
    const VectorXd a = wx * s.in + wh * hp + b.col(0);
    s.i = a.segment(0, h).unaryExpr(&sigmoid);
    s.f = a.segment(h, h).unaryExpr(&sigmoid);
    s.g = a.segment(2 * h, h).array().tanh();
    s.o = a.segment(3 * h, h).unaryExpr(&sigmoid);
    s.c = s.f.cwiseProduct(cp) + s.i.cwiseProduct(s.g);
    s.tc = s.c.array().tanh();
    s.h = s.o.cwiseProduct(s.tc);
    hp = s.h;
    cp = s.c;
  }
}

// Backprop through time. dh_last is the gradient on the final hidden state;
// returns gradients on each step's input.
std::vector<VectorXd> lstm_backward(const MatrixXd& wx, const MatrixXd& wh, const std::vector<LstmStep>& steps,
                                    const VectorXd& dh_last, int h, MatrixXd& gwx, MatrixXd& gwh, MatrixXd& gb) {
  std::vector<VectorXd> dins(steps.size());
  VectorXd dh = dh_last, dc = VectorXd::Zero(h);
  VectorXd da(4 * h);
  for (std::size_t k = steps.size(); k-- > 0;) {
    const auto& s = steps[k];
    const VectorXd d_o = dh.cwiseProduct(s.tc);
    dc += dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tc.array().square()).matrix());
    const VectorXd di = dc.cwiseProduct(s.g);
    const VectorXd dg = dc.cwiseProduct(s.i);
    const VectorXd df = dc.cwiseProduct(s.c_prev);
    da.segment(0, h) = di.cwiseProduct((s.i.array() * (1.0 - s.i.array())).matrix());
    da.segment(h, h) = df.cwiseProduct((s.f.array() * (1.0 - s.f.array())).matrix());
    da.segment(2 * h, h) = dg.cwiseProduct((1.0 - s.g.array().square()).matrix());
    da.segment(3 * h, h) = d_o.cwiseProduct((s.o.array() * (1.0 - s.o.array())).matrix());
    gwx.noalias() += da * s.in.transpose();
    gwh.noalias() += da * s.h_prev.transpose();
    gb.col(0) += da;
    dins[k] = wx.transpose() * da;
    dh = wh.transpose() * da;
    dc = dc.cwiseProduct(s.f);
  }
  return dins;
}

VectorXd encode(const MetaNetParams& p, const FeatureVector& f, EncoderTrace& tr) {
  using T = MetaNetParams;
  const int nv = valid_workers(p, f);
  const int l = f.n_layers;
  tr.rows.resize(static_cast<std::size_t>(l));
  std::vector<VectorXd> x(static_cast<std::size_t>(l));
  std::vector<double> v(static_cast<std::size_t>(nv));
  for (int i = 0; i < l; ++i) {
    for (int w = 0; w < nv; ++w) v[static_cast<std::size_t>(w)] = std_log_t(p.norm, f.t_seq[i][w]);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    tr.rows[i] = Eigen::Vector3d(sorted_mean(v), *mx, *mn);
    x[i] = p.tensors[T::kEmbedW] * tr.rows[i] + p.tensors[T::kEmbedB].col(0);
  }
  const int h = p.dims.hidden;
  lstm_forward(p.tensors[T::kLstm0Wx], p.tensors[T::kLstm0Wh], p.tensors[T::kLstm0B], x, h, tr.s0);
  std::vector<VectorXd> h0(static_cast<std::size_t>(l));
  for (int i = 0; i < l; ++i) h0[i] = tr.s0[i].h;
  lstm_forward(p.tensors[T::kLstm1Wx], p.tensors[T::kLstm1Wh], p.tensors[T::kLstm1B], h0, h, tr.s1);
  tr.enc = tr.s1.back().h;
  return tr.enc;
}

void encoder_backward(const MetaNetParams& p, const EncoderTrace& tr, const VectorXd& denc, Gradients& g) {
  using T = MetaNetParams;
  const int h = p.dims.hidden;
  const auto dh0 = lstm_backward(p.tensors[T::kLstm1Wx], p.tensors[T::kLstm1Wh], tr.s1, denc, h, g[T::kLstm1Wx],
                                 g[T::kLstm1Wh], g[T::kLstm1B]);
  // Layer 0 receives gradient at every step, not just the last.
  std::vector<VectorXd> dx(tr.s0.size());
  {
    const auto& wx = p.tensors[T::kLstm0Wx];
    const auto& wh = p.tensors[T::kLstm0Wh];
    VectorXd dh = VectorXd::Zero(h), dc = VectorXd::Zero(h), da(4 * h);
    for (std::size_t k = tr.s0.size(); k-- > 0;) {
      const auto& s = tr.s0[k];
      dh += dh0[k];
      const VectorXd d_o = dh.cwiseProduct(s.tc);
      dc += dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tc.array().square()).matrix());
      da.segment(0, h) = dc.cwiseProduct(s.g).cwiseProduct((s.i.array() * (1.0 - s.i.array())).matrix());
      da.segment(h, h) = dc.cwiseProduct(s.c_prev).cwiseProduct((s.f.array() * (1.0 - s.f.array())).matrix());
      da.segment(2 * h, h) = dc.cwiseProduct(s.i).cwiseProduct((1.0 - s.g.array().square()).matrix());
      da.segment(3 * h, h) = d_o.cwiseProduct((s.o.array() * (1.0 - s.o.array())).matrix());
      g[T::kLstm0Wx].noalias() += da * s.in.transpose();
      g[T::kLstm0Wh].noalias() += da * s.h_prev.transpose();
      g[T::kLstm0B].col(0) += da;
      dx[k] = wx.transpose() * da;
      dh = wh.transpose() * da;
      dc = dc.cwiseProduct(s.f);
    }
  }
  for (std::size_t k = 0; k < dx.size(); ++k) {
    g[T::kEmbedW].noalias() += dx[k] * tr.rows[k].transpose();
    g[T::kEmbedB].col(0) += dx[k];
  }
}

// Head inputs for every valid worker (without the candidate-independent
// encoder part filled separately).
struct HeadInputs {
  int nv = 0;
  int model = 0;
  int arch = 0;
  double out_scale = 1.0;
  MatrixXd z;  // head_in x nv
};

HeadInputs head_inputs(const MetaNetParams& p, const FeatureVector& f, const VectorXd& enc) {
  using T = MetaNetParams;
  const auto& nm = p.norm;
  HeadInputs hi;
  hi.nv = valid_workers(p, f);
  hi.model = p.model_index(f.model);
  hi.arch = p.arch_index(f.architecture);
  const int nv = hi.nv;
  std::vector<double> bd(static_cast<std::size_t>(nv)), bu(static_cast<std::size_t>(nv));
  for (int w = 0; w < nv; ++w) {
    bd[w] = std_log_b(nm, f.b_down[w]);
    bu[w] = std_log_b(nm, f.b_up[w]);
  }
  const double mbd = sorted_mean(bd), mbu = sorted_mean(bu);
  double sum_t = 0.0;
  std::vector<double> row(static_cast<std::size_t>(nv));
  for (int i = 0; i < f.n_layers; ++i) {
    for (int w = 0; w < nv; ++w) row[w] = f.t_seq[i][w];
    sum_t += sorted_mean(row);
  }
  hi.out_scale = nm.label_scale * nm.compute_ref / std::max(sum_t, kMinTime);

  const auto& d = p.dims;
  hi.z.resize(d.head_in(), nv);
  const double sp = (std::log2(static_cast<double>(f.partition_bytes)) - nm.sp_mean) / nm.sp_std;
  const double sc = (static_cast<double>(f.credit) - nm.sc_mean) / nm.sc_std;
  for (int w = 0; w < nv; ++w) {
    double tw = 0.0;
    for (int i = 0; i < f.n_layers; ++i) tw += std_log_t(nm, f.t_seq[i][w]);
    tw /= static_cast<double>(f.n_layers);
    int r = 0;
    auto col = hi.z.col(w);
    col.segment(r, d.hidden) = enc;
    r += d.hidden;
    col(r++) = bd[w];
    col(r++) = bu[w];
    col(r++) = mbd;
    col(r++) = mbu;
    col(r++) = static_cast<double>(f.n_workers) / nm.n_scale;
    col(r++) = static_cast<double>(f.n_layers) / nm.l_scale;
    col.segment(r, d.embed) = p.tensors[T::kModelTable].col(hi.model);
    r += d.embed;
    col.segment(r, d.embed) = p.tensors[T::kArchTable].col(hi.arch);
    r += d.embed;
    col(r++) = sp;
    col(r++) = sc;
    col(r++) = tw;
  }
  return hi;
}

// raw outputs (1 x nv) and the tanh activations.
VectorXd head_forward(const MetaNetParams& p, const HeadInputs& hi, MatrixXd* act) {
  using T = MetaNetParams;
  MatrixXd u = p.tensors[T::kDense1W] * hi.z;
  u.colwise() += p.tensors[T::kDense1B].col(0);
  MatrixXd a = u.array().tanh();
  VectorXd raw = (p.tensors[T::kDense2W] * a).transpose();
  raw.array() += p.tensors[T::kDense2B](0, 0);
  if (act) *act = std::move(a);
  return raw;
}

// Objective for one sample given its head inputs; accumulates head gradients
// and returns d objective / d enc in `denc`.
double head_backward(const MetaNetParams& p, const HeadInputs& hi, const std::vector<double>& label, Gradients& g,
                     VectorXd& denc) {
  using T = MetaNetParams;
  if (static_cast<int>(label.size()) < hi.nv) throw MetaNetError("label shorter than the valid worker count");
  MatrixXd a;
  const VectorXd raw = head_forward(p, hi, &a);
  VectorXd resid(hi.nv);
  for (int w = 0; w < hi.nv; ++w) resid(w) = raw(w) - label[w] / hi.out_scale;
  const double obj = resid.squaredNorm();
  const Eigen::RowVectorXd draw = 2.0 * resid.transpose();
  g[T::kDense2W].noalias() += draw * a.transpose();
  g[T::kDense2B](0, 0) += draw.sum();
  const MatrixXd da = p.tensors[T::kDense2W].transpose() * draw;
  const MatrixXd du = da.array() * (1.0 - a.array().square());
  g[T::kDense1W].noalias() += du * hi.z.transpose();
  g[T::kDense1B].col(0) += du.rowwise().sum();
  const MatrixXd dz = p.tensors[T::kDense1W].transpose() * du;
  const auto& d = p.dims;
  denc = dz.topRows(d.hidden).rowwise().sum();
  const int m0 = d.hidden + 6;
  g[T::kModelTable].col(hi.model) += dz.middleRows(m0, d.embed).rowwise().sum();
  g[T::kArchTable].col(hi.arch) += dz.middleRows(m0 + d.embed, d.embed).rowwise().sum();
  return obj;
}

Gradients zero_grads(const MetaNetParams& p) {
  Gradients g;
  for (const auto& t : p.tensors) g.push_back(MatrixXd::Zero(t.rows(), t.cols()));
  return g;
}

// Groups sample indices by identical encoder input (T and valid worker count).
std::vector<int> encoder_groups(const MetaNetParams& p, const std::vector<TrainingSample>& data) {
  std::map<std::vector<double>, int> seen;
  std::vector<int> out(data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& f = data[s].features;
    const int nv = valid_workers(p, f);
    std::vector<double> key;
    key.reserve(static_cast<std::size_t>(f.n_layers * nv + 1));
    key.push_back(nv);
    for (const auto& row : f.t_seq) key.insert(key.end(), row.begin(), row.begin() + std::min<int>(nv, row.size()));
    auto it = seen.emplace(std::move(key), static_cast<int>(seen.size())).first;
    out[s] = it->second;
  }
  return out;
}

struct Adam {
  std::vector<MatrixXd> m, v;
  long t = 0;
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  Adam(const MetaNetParams& p, double lr_) : lr(lr_) {
    for (const auto& x : p.tensors) {
      m.push_back(MatrixXd::Zero(x.rows(), x.cols()));
      v.push_back(MatrixXd::Zero(x.rows(), x.cols()));
    }
  }
  void step(MetaNetParams& p, const Gradients& g) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t k = 0; k < p.tensors.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k].cwiseProduct(g[k]);
      p.tensors[k].array() -= lr * (m[k].array() / c1) / ((v[k].array() / c2).sqrt() + eps);
    }
  }
};

// Mean objective and gradient over `idx`, running the encoder once per group.
double batch_gradient(const MetaNetParams& p, const std::vector<TrainingSample>& data,
                      const std::vector<int>& groups, const std::vector<std::size_t>& idx, Gradients& g,
                      bool need_encoder_grad) {
  std::map<int, std::vector<std::size_t>> by_group;
  for (auto s : idx) by_group[groups[s]].push_back(s);
  double total = 0.0;
  EncoderTrace tr;
  VectorXd denc_sum, denc;
  for (const auto& [grp, members] : by_group) {
    const VectorXd enc = encode(p, data[members.front()].features, tr);
    denc_sum = VectorXd::Zero(enc.size());
    for (auto s : members) {
      const auto hi = head_inputs(p, data[s].features, enc);
      total += head_backward(p, hi, data[s].label, g, denc);
      denc_sum += denc;
    }
    if (need_encoder_grad) encoder_backward(p, tr, denc_sum, g);
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (auto& x : g) x *= inv;
  return total * inv;
}

json matrix_to_json(const MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw MetaNetError("checkpoint tensor size mismatch");
  MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++].get<double>();
  }
  return m;
}

}  // namespace

FeatureVector make_features(const RuntimeMetrics& metrics, const SchedulerConfig& candidate) {
  FeatureVector f;
  f.n_workers = metrics.n_workers;
  f.n_layers = metrics.n_layers;
  f.t_seq = metrics.bp_time;
  f.b_down = metrics.b_down;
  f.b_up = metrics.b_up;
  f.model = metrics.model;
  f.architecture = std::string(to_string(metrics.architecture));
  f.partition_bytes = candidate.partition_bytes;
  f.credit = candidate.credit_multiplier;
  return f;
}

TrainingSample make_sample(const RuntimeMetrics& metrics) {
  TrainingSample s;
  s.features = make_features(metrics, metrics.config);
  s.label = metrics.speed;
  s.iter_start = metrics.iter_start;
  return s;
}

const char* MetaNetParams::tensor_name(int t) {
  static const char* names[] = {"embed_w",  "embed_b",     "lstm0_wx",   "lstm0_wh", "lstm0_b",
                                "lstm1_wx", "lstm1_wh",    "lstm1_b",    "model_table", "arch_table",
                                "dense1_w", "dense1_b",    "dense2_w",   "dense2_b"};
  return names[t];
}

MetaNetParams MetaNetParams::init(const MetaNetDims& dims, std::vector<std::string> models,
                                  std::vector<std::string> archs, std::uint64_t seed) {
  MetaNetParams p;
  p.dims = dims;
  auto with_unknown = [](std::vector<std::string> v) {
    v.erase(std::remove(v.begin(), v.end(), kUnknown), v.end());
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    v.insert(v.begin(), kUnknown);
    return v;
  };
  p.model_vocab = with_unknown(std::move(models));
  p.arch_vocab = with_unknown(std::move(archs));

  std::mt19937_64 rng(seed);
  auto glorot = [&](int rows, int cols) {
    const double lim = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-lim, lim);
    MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
    }
    return m;
  };
  auto small = [&](int rows, int cols) {
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    MatrixXd m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
    }
    return m;
  };
  const int h = dims.hidden;
  auto lstm_bias = [&] {
    MatrixXd b = MatrixXd::Zero(4 * h, 1);
    b.block(h, 0, h, 1).setOnes();
    return b;
  };
  p.tensors.resize(kNumTensors);
  p.tensors[kEmbedW] = glorot(dims.d_e, 3);
  p.tensors[kEmbedB] = MatrixXd::Zero(dims.d_e, 1);
  p.tensors[kLstm0Wx] = glorot(4 * h, dims.d_e);
  p.tensors[kLstm0Wh] = glorot(4 * h, h);
  p.tensors[kLstm0B] = lstm_bias();
  p.tensors[kLstm1Wx] = glorot(4 * h, h);
  p.tensors[kLstm1Wh] = glorot(4 * h, h);
  p.tensors[kLstm1B] = lstm_bias();
  p.tensors[kModelTable] = small(dims.embed, static_cast<int>(p.model_vocab.size()));
  p.tensors[kArchTable] = small(dims.embed, static_cast<int>(p.arch_vocab.size()));
  p.tensors[kDense1W] = glorot(dims.dense, dims.head_in());
  p.tensors[kDense1B] = MatrixXd::Zero(dims.dense, 1);
  p.tensors[kDense2W] = glorot(1, dims.dense);
  p.tensors[kDense2B] = MatrixXd::Zero(1, 1);
  return p;
}

MetaNetParams MetaNetParams::zeros_like() const {
  MetaNetParams z = *this;
  for (auto& t : z.tensors) t.setZero();
  return z;
}

double MetaNetParams::norm_l2() const {
  double s = 0.0;
  for (const auto& t : tensors) s += t.squaredNorm();
  return std::sqrt(s);
}

std::size_t MetaNetParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

int MetaNetParams::model_index(const std::string& name) const {
  auto it = std::find(model_vocab.begin(), model_vocab.end(), name);
  return it == model_vocab.end() ? 0 : static_cast<int>(it - model_vocab.begin());
}

int MetaNetParams::arch_index(const std::string& name) const {
  auto it = std::find(arch_vocab.begin(), arch_vocab.end(), name);
  return it == arch_vocab.end() ? 0 : static_cast<int>(it - arch_vocab.begin());
}

VectorXd forward(const MetaNetParams& params, const FeatureVector& features) {
  check_shapes(params, features);
  EncoderTrace tr;
  const VectorXd enc = encode(params, features, tr);
  const auto hi = head_inputs(params, features, enc);
  return head_forward(params, hi, nullptr) * hi.out_scale;
}

std::vector<VectorXd> forward_candidates(const MetaNetParams& params, const FeatureVector& base,
                                         const std::vector<SchedulerConfig>& candidates) {
  check_shapes(params, base);
  EncoderTrace tr;
  const VectorXd enc = encode(params, base, tr);
  FeatureVector f = base;
  std::vector<VectorXd> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    f.partition_bytes = c.partition_bytes;
    f.credit = c.credit_multiplier;
    const auto hi = head_inputs(params, f, enc);
    out.push_back(head_forward(params, hi, nullptr) * hi.out_scale);
  }
  return out;
}

double loss(const VectorXd& predicted, const VectorXd& observed) {
  if (predicted.size() != observed.size()) throw MetaNetError("loss: length mismatch");
  return (predicted - observed).norm();
}

double objective(const MetaNetParams& params, const TrainingSample& sample) {
  check_shapes(params, sample.features);
  EncoderTrace tr;
  const VectorXd enc = encode(params, sample.features, tr);
  const auto hi = head_inputs(params, sample.features, enc);
  if (static_cast<int>(sample.label.size()) < hi.nv) throw MetaNetError("label shorter than the valid worker count");
  const VectorXd raw = head_forward(params, hi, nullptr);
  double obj = 0.0;
  for (int w = 0; w < hi.nv; ++w) {
    const double r = raw(w) - sample.label[w] / hi.out_scale;
    obj += r * r;
  }
  return obj;
}

double backward(const MetaNetParams& params, const TrainingSample& sample, Gradients& grads) {
  check_shapes(params, sample.features);
  grads = zero_grads(params);
  EncoderTrace tr;
  const VectorXd enc = encode(params, sample.features, tr);
  const auto hi = head_inputs(params, sample.features, enc);
  VectorXd denc;
  const double obj = head_backward(params, hi, sample.label, grads, denc);
  encoder_backward(params, tr, denc, grads);
  return obj;
}

void fit_normalization(MetaNetParams& params, const std::vector<TrainingSample>& data) {
  if (data.empty()) throw MetaNetError("cannot fit normalization on an empty dataset");
  auto mean_std = [](const std::vector<double>& v, double& m, double& s) {
    m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - m) * (x - m);
    s = std::sqrt(var / static_cast<double>(v.size()));
    if (!(s > 1e-12)) s = 1.0;
  };
  auto& nm = params.norm;
  std::vector<double> lt, lb, sp, sc;
  for (const auto& d : data) {
    const auto& f = d.features;
    const int nv = std::min(f.n_workers, params.dims.n_max);
    for (const auto& row : f.t_seq) {
      for (int w = 0; w < nv; ++w) lt.push_back(std::log(std::max(row[w], kMinTime)));
    }
    for (int w = 0; w < nv; ++w) {
      lb.push_back(std::log(f.b_down[w]));
      lb.push_back(std::log(f.b_up[w]));
    }
    sp.push_back(std::log2(static_cast<double>(f.partition_bytes)));
    sc.push_back(f.credit);
  }
  mean_std(lt, nm.log_t_mean, nm.log_t_std);
  mean_std(lb, nm.log_b_mean, nm.log_b_std);
  mean_std(sp, nm.sp_mean, nm.sp_std);
  mean_std(sc, nm.sc_mean, nm.sc_std);
  nm.n_scale = params.dims.n_max;
  int max_l = 1;
  for (const auto& d : data) max_l = std::max(max_l, d.features.n_layers);
  nm.l_scale = max_l;

  std::vector<double> sums;
  for (const auto& d : data) {
    const auto& f = d.features;
    const int nv = std::min(f.n_workers, params.dims.n_max);
    double s = 0.0;
    for (const auto& row : f.t_seq) s += sorted_mean(std::vector<double>(row.begin(), row.begin() + nv));
    sums.push_back(std::max(s, kMinTime));
  }
  nm.compute_ref = std::accumulate(sums.begin(), sums.end(), 0.0) / static_cast<double>(sums.size());
  double acc = 0.0;
  std::size_t cnt = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const int nv = std::min(data[k].features.n_workers, params.dims.n_max);
    for (int w = 0; w < nv && w < static_cast<int>(data[k].label.size()); ++w) {
      acc += data[k].label[w] * sums[k] / nm.compute_ref;
      ++cnt;
    }
  }
  nm.label_scale = cnt > 0 && acc > 0.0 ? acc / static_cast<double>(cnt) : 1.0;
}

double mean_objective(const MetaNetParams& params, const std::vector<TrainingSample>& data) {
  if (data.empty()) return 0.0;
  const auto groups = encoder_groups(params, data);
  std::map<int, VectorXd> enc;
  EncoderTrace tr;
  double total = 0.0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    auto it = enc.find(groups[s]);
    if (it == enc.end()) {
      check_shapes(params, data[s].features);
      it = enc.emplace(groups[s], encode(params, data[s].features, tr)).first;
    }
    const auto hi = head_inputs(params, data[s].features, it->second);
    const VectorXd raw = head_forward(params, hi, nullptr);
    for (int w = 0; w < hi.nv; ++w) {
      const double r = raw(w) - data[s].label.at(w) / hi.out_scale;
      total += r * r;
    }
  }
  return total / static_cast<double>(data.size());
}

TrainResult train_from(MetaNetParams params, const std::vector<TrainingSample>& data, const TrainOptions& options) {
  if (data.empty()) throw MetaNetError("training dataset is empty");
  if (options.batch_size < 1 || options.epochs < 0) throw MetaNetError("bad training options");
  for (const auto& d : data) {
    check_shapes(params, d.features);
    for (double y : d.label) {
      if (!(y > 0.0) || !std::isfinite(y)) throw MetaNetError("labels must be positive and finite");
    }
  }
  const auto groups = encoder_groups(params, data);
  TrainResult res;
  res.initial_loss = mean_objective(params, data);
  if (!std::isfinite(res.initial_loss)) throw MetaNetError("initial loss is not finite");
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(params, options.lr);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Gradients g = zero_grads(params);
  std::vector<std::size_t> idx;
  for (int e = 0; e < options.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(options.batch_size));
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(end));
      for (auto& x : g) x.setZero();
      const double l = batch_gradient(params, data, groups, idx, g, true);
      if (!std::isfinite(l)) {
        throw MetaNetError("training diverged at epoch " + std::to_string(e + 1) + " (non-finite loss)");
      }
      sum += l * static_cast<double>(idx.size());
      adam.step(params, g);
    }
    const double epoch_loss = sum / static_cast<double>(data.size());
    res.epoch_loss.push_back(epoch_loss);
    if (options.on_epoch) options.on_epoch(e + 1, epoch_loss);
  }
  res.params = std::move(params);
  return res;
}

TrainResult train_offline(const std::vector<TrainingSample>& data, const TrainOptions& options,
                          const MetaNetDims& dims) {
  if (data.empty()) throw MetaNetError("training dataset is empty");
  std::set<std::string> models, archs;
  for (const auto& d : data) {
    models.insert(d.features.model);
    archs.insert(d.features.architecture);
  }
  auto params = MetaNetParams::init(dims, {models.begin(), models.end()}, {archs.begin(), archs.end()}, options.seed);
  fit_normalization(params, data);
  return train_from(std::move(params), data, options);
}

MetaNetParams adapt_online(const MetaNetParams& params, const std::vector<TrainingSample>& recent,
                           const AdaptOptions& options) {
  if (recent.empty()) throw MetaNetError("online adaptation needs at least one sample");
  MetaNetParams cur = params;
  if (options.steps <= 0) return cur;
  const auto groups = encoder_groups(cur, recent);
  std::vector<std::size_t> all(recent.size());
  std::iota(all.begin(), all.end(), 0);
  double cur_obj = mean_objective(cur, recent);
  if (!std::isfinite(cur_obj)) throw MetaNetError("online adaptation: non-finite loss");
  Gradients g = zero_grads(cur);
  // The step grows after every accepted move and halves on rejection.
  double lr = options.lr;
  for (int step = 0; step < options.steps; ++step) {
    for (auto& x : g) x.setZero();
    batch_gradient(cur, recent, groups, all, g, !options.head_only);
    bool moved = false;
    for (int tries = 0; tries < 30 && !moved; ++tries) {
      MetaNetParams cand = cur;
      for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
        if (options.head_only && !MetaNetParams::is_head(t)) continue;
        cand.tensors[t] -= lr * g[t];
      }
      const double obj = mean_objective(cand, recent);
      if (obj <= cur_obj) {
        cur = std::move(cand);
        cur_obj = obj;
        moved = true;
        lr *= 2.0;
      } else {
        lr *= 0.5;
      }
    }
    if (!moved) break;
  }
  return cur;
}

std::string serialize_checkpoint(const MetaNetParams& params) {
  json doc;
  doc["format"] = "commsched-metanet";
  doc["version"] = 1;
  const auto& d = params.dims;
  doc["dims"] = {{"d_e", d.d_e}, {"hidden", d.hidden}, {"dense", d.dense}, {"embed", d.embed}, {"n_max", d.n_max}};
  const auto& n = params.norm;
  doc["normalization"] = {{"log_t_mean", n.log_t_mean}, {"log_t_std", n.log_t_std},
                          {"log_b_mean", n.log_b_mean}, {"log_b_std", n.log_b_std},
                          {"sp_mean", n.sp_mean},       {"sp_std", n.sp_std},
                          {"sc_mean", n.sc_mean},       {"sc_std", n.sc_std},
                          {"n_scale", n.n_scale},       {"l_scale", n.l_scale},
                          {"compute_ref", n.compute_ref}, {"label_scale", n.label_scale}};
  doc["model_vocab"] = params.model_vocab;
  doc["arch_vocab"] = params.arch_vocab;
  json tensors = json::object();
  for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
    tensors[MetaNetParams::tensor_name(t)] = matrix_to_json(params.tensors.at(static_cast<std::size_t>(t)));
  }
  doc["tensors"] = std::move(tensors);
  return doc.dump() + "\n";
}

MetaNetParams parse_checkpoint(std::string_view text) {
  MetaNetParams p;
  try {
    const auto doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "commsched-metanet") throw MetaNetError("not a meta-network checkpoint");
    if (doc.at("version").get<int>() != 1) throw MetaNetError("unsupported checkpoint version");
    const auto& d = doc.at("dims");
    p.dims = {d.at("d_e").get<int>(), d.at("hidden").get<int>(), d.at("dense").get<int>(), d.at("embed").get<int>(),
              d.at("n_max").get<int>()};
    const auto& n = doc.at("normalization");
    auto& nm = p.norm;
    nm.log_t_mean = n.at("log_t_mean").get<double>();
    nm.log_t_std = n.at("log_t_std").get<double>();
    nm.log_b_mean = n.at("log_b_mean").get<double>();
    nm.log_b_std = n.at("log_b_std").get<double>();
    nm.sp_mean = n.at("sp_mean").get<double>();
    nm.sp_std = n.at("sp_std").get<double>();
    nm.sc_mean = n.at("sc_mean").get<double>();
    nm.sc_std = n.at("sc_std").get<double>();
    nm.n_scale = n.at("n_scale").get<double>();
    nm.l_scale = n.at("l_scale").get<double>();
    nm.compute_ref = n.at("compute_ref").get<double>();
    nm.label_scale = n.at("label_scale").get<double>();
    p.model_vocab = doc.at("model_vocab").get<std::vector<std::string>>();
    p.arch_vocab = doc.at("arch_vocab").get<std::vector<std::string>>();
    p.tensors.resize(MetaNetParams::kNumTensors);
    for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
      p.tensors[static_cast<std::size_t>(t)] = matrix_from_json(doc.at("tensors").at(MetaNetParams::tensor_name(t)));
    }
  } catch (const json::exception& e) {
    throw MetaNetError(std::string("checkpoint: ") + e.what());
  }
  // Shape consistency against the declared dims.
  const auto ref = MetaNetParams::init(p.dims, {}, {}, 0);
  for (int t = 0; t < MetaNetParams::kNumTensors; ++t) {
    const auto& a = p.tensors[static_cast<std::size_t>(t)];
    const auto& b = ref.tensors[static_cast<std::size_t>(t)];
    const bool table = t == MetaNetParams::kModelTable || t == MetaNetParams::kArchTable;
    if (a.rows() != b.rows() || (!table && a.cols() != b.cols())) {
      throw MetaNetError(std::string("checkpoint: tensor '") + MetaNetParams::tensor_name(t) + "' has the wrong shape");
    }
  }
  if (p.tensors[MetaNetParams::kModelTable].cols() != static_cast<Eigen::Index>(p.model_vocab.size()) ||
      p.tensors[MetaNetParams::kArchTable].cols() != static_cast<Eigen::Index>(p.arch_vocab.size())) {
    throw MetaNetError("checkpoint: embedding tables do not match vocabularies");
  }
  return p;
}

void save_checkpoint(const MetaNetParams& params, const std::filesystem::path& path) {
  write_text_file(path, serialize_checkpoint(params));
}

MetaNetParams load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_text_file(path)); }

std::string serialize_sample(const TrainingSample& s) {
  const auto& f = s.features;
  json j;
  j["env"] = s.env;
  j["iter_start"] = s.iter_start;
  j["model"] = f.model;
  j["arch"] = f.architecture;
  j["n"] = f.n_workers;
  j["l"] = f.n_layers;
  j["partition_bytes"] = f.partition_bytes;
  j["credit"] = f.credit;
  j["b_down"] = f.b_down;
  j["b_up"] = f.b_up;
  j["t"] = f.t_seq;
  j["label"] = s.label;
  return j.dump();
}

TrainingSample parse_sample(std::string_view line) {
  TrainingSample s;
  try {
    const auto j = json::parse(line);
    auto& f = s.features;
    s.env = j.value("env", std::string());
    s.iter_start = j.value("iter_start", 0);
    f.model = j.at("model").get<std::string>();
    f.architecture = j.at("arch").get<std::string>();
    f.n_workers = j.at("n").get<int>();
    f.n_layers = j.at("l").get<int>();
    f.partition_bytes = j.at("partition_bytes").get<std::int64_t>();
    f.credit = j.at("credit").get<int>();
    f.b_down = j.at("b_down").get<std::vector<double>>();
    f.b_up = j.at("b_up").get<std::vector<double>>();
    f.t_seq = j.at("t").get<std::vector<std::vector<double>>>();
    s.label = j.at("label").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("dataset sample: ") + e.what());
  }
  const auto& f = s.features;
  if (static_cast<int>(f.t_seq.size()) != f.n_layers || static_cast<int>(f.b_down.size()) != f.n_workers ||
      static_cast<int>(f.b_up.size()) != f.n_workers || static_cast<int>(s.label.size()) != f.n_workers) {
    throw ValidationError("dataset sample: inconsistent shapes");
  }
  return s;
}

std::vector<TrainingSample> load_dataset(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<TrainingSample> out;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string_view line(text.data() + start, end - start);
    if (!line.empty() && line.find_first_not_of(" \t\r") != std::string_view::npos) {
      try {
        out.push_back(parse_sample(line));
      } catch (const std::exception& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
  }
  if (out.empty()) throw ValidationError("dataset '" + path.string() + "' is empty");
  return out;
}

}  // namespace commsched
