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

#ifndef COMMSCHED_TESTS_GRADCHECK_HPP
#define COMMSCHED_TESTS_GRADCHECK_HPP

#include <algorithm>
#include <cmath>

#include "commsched/metanet.hpp"

namespace gradcheck {

// Entries whose analytic and numeric values are both below this are compared
// absolutely; the FD truncation error of an O(1) objective at eps=1e-5 is
// ~1e-10, so relative error below ~1e-6 magnitude is noise.
inline constexpr double kFloor = 1e-6;

// Max over every parameter of |analytic - central FD| / max(|a|, |fd|, floor).
inline double max_relative_error(const commsched::MetaNetParams& p, const commsched::TrainingSample& s,
                                 double eps) {
  commsched::Gradients g;
  commsched::backward(p, s, g);
  commsched::MetaNetParams q = p;
  double worst = 0.0;
  for (std::size_t t = 0; t < q.tensors.size(); ++t) {
    for (Eigen::Index k = 0; k < q.tensors[t].size(); ++k) {
      double& x = q.tensors[t].data()[k];
      const double x0 = x;
      x = x0 + eps;
      const double up = commsched::objective(q, s);
      x = x0 - eps;
      const double down = commsched::objective(q, s);
      x = x0;
      const double fd = (up - down) / (2 * eps);
      const double an = g[t].data()[k];
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), kFloor}));
    }
  }
  return worst;
}

}  // namespace gradcheck

#endif  // COMMSCHED_TESTS_GRADCHECK_HPP
