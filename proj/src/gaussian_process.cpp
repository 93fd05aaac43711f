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

#include "commsched/gaussian_process.hpp"

#include <cmath>
#include <limits>

namespace commsched {

double GaussianProcess::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Hyper& h) {
  const Eigen::ArrayXd d = (a - b).array() / h.lengthscales.array();
  return h.signal_var * std::exp(-0.5 * d.square().sum());
}

bool GaussianProcess::fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyper& hyper, double jitter) {
  const auto n = x.rows();
  if (n == 0 || y.size() != n) return false;
  x_ = x;
  hyper_ = hyper;
  y_mean_ = y.mean();
  const double var = (y.array() - y_mean_).square().sum() / static_cast<double>(n);
  y_std_ = var > 0.0 ? std::sqrt(var) : 1.0;
  const Eigen::VectorXd ys = (y.array() - y_mean_) / y_std_;

  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      k(i, j) = k(j, i) = kernel(x.row(i).transpose(), x.row(j).transpose(), hyper);
    }
  }
  k.diagonal().array() += hyper.noise_var + jitter;
  llt_.compute(k);
  if (llt_.info() != Eigen::Success) return false;
  alpha_ = llt_.solve(ys);
  const Eigen::MatrixXd l = llt_.matrixL();
  lml_ = -0.5 * ys.dot(alpha_) - l.diagonal().array().log().sum() -
         0.5 * static_cast<double>(n) * std::log(2.0 * M_PI);
  return std::isfinite(lml_);
}

bool GaussianProcess::fit_ml(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& grid,
                             double noise_var_raw, double jitter) {
  const auto n = x.rows();
  if (n == 0) return false;
  const double mean = y.mean();
  const double var = (y.array() - mean).square().sum() / static_cast<double>(n);
  if (!(var > 0.0)) return false;
  Hyper best;
  double best_lml = -std::numeric_limits<double>::infinity();
  bool ok = false;
  const auto d = x.cols();
  Eigen::VectorXi idx = Eigen::VectorXi::Zero(d);
  const auto g = grid.size();
  // Enumerate grid^d lengthscale combinations.
  while (true) {
    Hyper h;
    h.lengthscales.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) h.lengthscales(k) = grid(idx(k));
    h.signal_var = 1.0;
    h.noise_var = noise_var_raw / var;
    if (fit(x, y, h, jitter) && lml_ > best_lml) {
      best_lml = lml_;
      best = h;
      ok = true;
    }
    Eigen::Index k = 0;
    while (k < d && ++idx(k) == g) idx(k++) = 0;
    if (k == d) break;
  }
  if (!ok) return false;
  return fit(x, y, best, jitter);
}

GaussianProcess::Prediction GaussianProcess::predict(const Eigen::VectorXd& x) const {
  const auto n = x_.rows();
  Eigen::VectorXd ks(n);
  for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(x, x_.row(i).transpose(), hyper_);
  Prediction p;
  p.mean = y_mean_ + y_std_ * ks.dot(alpha_);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  p.var = std::max(0.0, hyper_.signal_var - v.squaredNorm()) * y_std_ * y_std_;
  return p;
}

double expected_improvement(double mean, double sd, double best) {
  if (!(sd > 0.0)) return std::max(0.0, mean - best);
  const double z = (mean - best) / sd;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return (mean - best) * cdf + sd * pdf;
}

}  // namespace commsched
