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

// Speed predictor f(T, B, statics, <S_p, S_c>) -> per-worker samples/s.
//
//   per-layer row of T (over workers) -> [mean, max, min] of standardized log T
//     -> affine embed (d_e) -> 2-layer LSTM (h) -> final hidden state
//   per worker w: [hidden, B_d[w], B_u[w], mean B_d, mean B_u, n, l,
//                  model embed, arch embed, log2 S_p, S_c, mean_i log T[i][w]]
//     -> dense(tanh) -> dense(1) -> raw[w]
//   V[w] = raw[w] * label_scale * compute_ref / sum_i mean_w T[i][w]
//
// The head is shared across workers, so permuting workers permutes the
// output. The last factor expresses the output relative to the
// compute-bound rate of the sample; a zero network still predicts 0.

#ifndef COMMSCHED_METANET_HPP
#define COMMSCHED_METANET_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "commsched/simcore.hpp"

namespace commsched {

class MetaNetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureVector {
  std::vector<std::vector<double>> t_seq;  // [layer][worker] BP seconds
  std::vector<double> b_down;              // Gbps per worker
  std::vector<double> b_up;
  int n_workers = 0;
  int n_layers = 0;
  std::string model;
  std::string architecture;
  std::int64_t partition_bytes = 4 << 20;
  int credit = 1;
};

struct TrainingSample {
  FeatureVector features;
  std::vector<double> label;  // observed samples/s per worker
  std::string env;            // environment id, for grouping and splits
  int iter_start = 0;
};

/// Features of `metrics` paired with a candidate configuration.
FeatureVector make_features(const RuntimeMetrics& metrics, const SchedulerConfig& candidate);
TrainingSample make_sample(const RuntimeMetrics& metrics);

struct MetaNetDims {
  int d_e = 16;
  int hidden = 32;
  int dense = 64;
  int embed = 8;
  int n_max = 16;

  int head_in() const { return hidden + 6 + 2 * embed + 3; }
  bool operator==(const MetaNetDims&) const = default;
};

struct Normalization {
  double log_t_mean = 0.0, log_t_std = 1.0;
  double log_b_mean = 0.0, log_b_std = 1.0;
  double sp_mean = 21.0, sp_std = 5.5;  // log2 bytes
  double sc_mean = 8.5, sc_std = 4.6;
  double n_scale = 16.0, l_scale = 32.0;
  double compute_ref = 1.0;  // typical sum_i mean_w T
  double label_scale = 1.0;  // typical label * (sum T) / compute_ref

  bool operator==(const Normalization&) const = default;
};

struct MetaNetParams {
  enum Tensor {
    kEmbedW, kEmbedB,
    kLstm0Wx, kLstm0Wh, kLstm0B,
    kLstm1Wx, kLstm1Wh, kLstm1B,
    kModelTable, kArchTable,
    kDense1W, kDense1B, kDense2W, kDense2B,
    kNumTensors
  };
  static const char* tensor_name(int t);
  static bool is_head(int t) { return t >= kDense1W; }

  MetaNetDims dims;
  Normalization norm;
  std::vector<std::string> model_vocab;  // column 0 of the tables is "unknown"
  std::vector<std::string> arch_vocab;
  std::vector<Eigen::MatrixXd> tensors;

  /// Seeded Glorot-uniform init; forget-gate biases start at 1.
  static MetaNetParams init(const MetaNetDims& dims, std::vector<std::string> models,
                            std::vector<std::string> archs, std::uint64_t seed);
  /// Same shapes, all entries zero.
  MetaNetParams zeros_like() const;

  double norm_l2() const;
  std::size_t num_scalars() const;
  int model_index(const std::string& name) const;
  int arch_index(const std::string& name) const;
};

using Gradients = std::vector<Eigen::MatrixXd>;

/// Predicted samples/s for the first min(n_workers, n_max) workers.
Eigen::VectorXd forward(const MetaNetParams& params, const FeatureVector& features);

/// forward() for many candidate configs sharing `base`'s runtime features;
/// the encoder runs once.
std::vector<Eigen::VectorXd> forward_candidates(const MetaNetParams& params, const FeatureVector& base,
                                                const std::vector<SchedulerConfig>& candidates);

/// Euclidean norm of the residual.
double loss(const Eigen::VectorXd& predicted, const Eigen::VectorXd& observed);

/// Training objective: squared norm of the residual in output units
/// (residual divided by the sample's output scale), over valid workers.
double objective(const MetaNetParams& params, const TrainingSample& sample);

/// Gradient of objective() w.r.t. every tensor; returns the objective value.
double backward(const MetaNetParams& params, const TrainingSample& sample, Gradients& grads);

/// Normalization statistics (and vocabularies) fitted on `data`.
void fit_normalization(MetaNetParams& params, const std::vector<TrainingSample>& data);

struct TrainOptions {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 1;
  std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainResult {
  MetaNetParams params;
  std::vector<double> epoch_loss;  // mean objective per epoch
  double initial_loss = 0.0;
};

/// Fits normalization, initializes from `seed`, trains with Adam.
/// Throws MetaNetError on an empty dataset or a non-finite loss.
TrainResult train_offline(const std::vector<TrainingSample>& data, const TrainOptions& options,
                          const MetaNetDims& dims = {});

/// Continues Adam training of existing params (normalization unchanged).
TrainResult train_from(MetaNetParams params, const std::vector<TrainingSample>& data,
                       const TrainOptions& options);

struct AdaptOptions {
  int steps = 50;
  double lr = 1e-3;
  bool head_only = true;
};

/// Full-batch gradient descent with step halving, so the objective on
/// `recent` never increases. Only the dense head moves unless head_only is off.
MetaNetParams adapt_online(const MetaNetParams& params, const std::vector<TrainingSample>& recent,
                           const AdaptOptions& options = {});

double mean_objective(const MetaNetParams& params, const std::vector<TrainingSample>& data);

void save_checkpoint(const MetaNetParams& params, const std::filesystem::path& path);
MetaNetParams load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const MetaNetParams& params);
MetaNetParams parse_checkpoint(std::string_view text);

std::string serialize_sample(const TrainingSample& sample);  // one JSON line, no newline
TrainingSample parse_sample(std::string_view line);
std::vector<TrainingSample> load_dataset(const std::filesystem::path& path);

}  // namespace commsched

#endif  // COMMSCHED_METANET_HPP
