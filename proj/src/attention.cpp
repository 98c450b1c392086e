// Copyright 2026 The capmil Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "capmil/attention.hpp"

#include <numbers>

namespace capmil {

DbaConstants dba_constants(int head_dim) {
  if (head_dim < 1) throw ContractError("dba_constants: head dimension must be >= 1");
  const double d = head_dim;
  const double four_over_pi = 4.0 / std::numbers::pi;
  return {std::sqrt(four_over_pi) * d, std::sqrt((2.0 - four_over_pi) * d)};
}

void AttentionScores::validate(double tol) const {
  ad::detail::require_mask("AttentionScores", mask, per_head.cols());
  for (Eigen::Index h = 0; h < per_head.rows(); ++h) {
    double total = 0;
    for (Eigen::Index n = 0; n < per_head.cols(); ++n) {
      const double a = per_head(h, n);
      if (!(a >= 0)) throw ContractError("attention score below zero");
      if (!mask[n] && a != 0) throw ContractError("attention on a masked position");
      total += a;
    }
    if (std::abs(total - 1.0) > tol) throw ContractError("attention row does not sum to one");
  }
}

Matrix argmax_indicator(const Matrix& sims, const Mask& mask) {
  if (sims.rows() != 1) throw DimensionError("argmax_indicator: expected a single row");
  ad::detail::require_mask("argmax_indicator", mask, sims.cols());
  double best = 0;
  bool seen = false;
  for (Eigen::Index n = 0; n < sims.cols(); ++n) {
    if (!mask[n]) continue;
    if (!seen || sims(0, n) > best) best = sims(0, n);
    seen = true;
  }
  Matrix out = Matrix::Zero(1, sims.cols());
  double ties = 0;
  for (Eigen::Index n = 0; n < sims.cols(); ++n) {
    if (mask[n] && sims(0, n) == best) {
      out(0, n) = 1.0;
      ties += 1.0;
    }
  }
  return out / ties;
}

}  // namespace capmil
