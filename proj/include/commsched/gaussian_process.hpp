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

#ifndef COMMSCHED_GAUSSIAN_PROCESS_HPP
#define COMMSCHED_GAUSSIAN_PROCESS_HPP

#include <Eigen/Dense>

namespace commsched {

/// Zero-mean GP with an anisotropic squared-exponential kernel over rows of X.
/// Targets are standardized internally.
class GaussianProcess {
 public:
  struct Hyper {
    Eigen::VectorXd lengthscales;
    double signal_var = 1.0;
    double noise_var = 1e-4;  // in standardized target units
  };

  /// Returns false if the kernel matrix cannot be factored.
  bool fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Hyper& hyper, double jitter = 1e-8);

  /// Fits with lengthscales chosen by log marginal likelihood from `grid`
  /// (same candidates on every dimension). noise_var is given in raw target
  /// units squared.
  bool fit_ml(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& grid, double noise_var_raw,
              double jitter = 1e-8);

  struct Prediction {
    double mean = 0.0;
    double var = 0.0;
  };
  Prediction predict(const Eigen::VectorXd& x) const;

  double log_marginal_likelihood() const { return lml_; }
  const Hyper& hyper() const { return hyper_; }

  static double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Hyper& h);

 private:
  Eigen::MatrixXd x_;
  Eigen::VectorXd alpha_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Hyper hyper_;
  double y_mean_ = 0.0, y_std_ = 1.0, lml_ = 0.0;
};

/// EI for maximization given a predictive mean/sd and the incumbent.
double expected_improvement(double mean, double sd, double best);

}  // namespace commsched

#endif  // COMMSCHED_GAUSSIAN_PROCESS_HPP
