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

#pragma once

// Attention-score functions. Every function returns rows on the probability
// simplex restricted to the valid (unmasked) bag positions.

#include <cmath>

#include "capmil/autodiff.hpp"

namespace capmil {

struct DbaConstants {
  double c = 0;  // mean of sum_j |a_j - b_j| for a, b ~ N(0, I_D)
  double s = 0;  // its standard deviation
};

// c = sqrt(4/pi) D, s = sqrt((2 - 4/pi) D). Throws ContractError for D < 1.
DbaConstants dba_constants(int head_dim);

// 1 at every valid position attaining the maximum of `sims` (1xN), divided by
// the number of maxima. Ties are exact floating-point equality.
Matrix argmax_indicator(const Matrix& sims, const Mask& mask);

// Per-head attention distributions over one bag.
struct AttentionScores {
  Matrix per_head;  // heads x N
  Mask mask;        // N

  int heads() const { return static_cast<int>(per_head.rows()); }
  // Arithmetic mean over heads, 1xN.
  Matrix head_average() const { return per_head.colwise().mean(); }
  // Throws ContractError unless every row is >= 0, zero at masked positions
  // and sums to 1 over valid positions within `tol`.
  void validate(double tol = 1e-9) const;
};

// Variance-excited multiplicative attention. R (CxC) and R_bias (1xC) are
// shared across heads; head j owns columns [jD, (j+1)D) of S (CxC) and
// S_bias (1xC).
template <typename Scalar>
struct VemaParams {
  ad::Var<Scalar> R, R_bias, S, S_bias;
};

// Distance-based attention; head j owns columns [jD, (j+1)D) of beta (1xC).
template <typename Scalar>
struct DbaParams {
  ad::Var<Scalar> beta;
};

// Gated attention of the GABMIL pooler: V, U are KxC and w is 1xK.
template <typename Scalar>
struct GatedAttentionParams {
  ad::Var<Scalar> V, U, w;
};

// delta = sigmoid(relu((variance(v_target) - 1) R + R_bias) S_j + S_bias_j), 1xD.
template <typename Scalar>
ad::Var<Scalar> vema_gate(ad::Var<Scalar> v_target, const VemaParams<Scalar>& p, int head, int head_dim,
                          const Mask& mask) {
  using namespace ad;
  auto var = add_scalar(reduce_variance(v_target, mask), Scalar(-1));
  auto hidden = relu(add(matmul(var, p.R), p.R_bias));
  auto s_j = slice_cols(p.S, Eigen::Index(head) * head_dim, head_dim);
  auto b_j = slice_cols(p.S_bias, Eigen::Index(head) * head_dim, head_dim);
  return sigmoid(add(matmul(hidden, s_j), b_j));
}

// softmax(q diag(delta) k^T / sqrt(D)) for one head. q_proj: 1xD,
// k_proj: NxD, v_target: the NxC bag before projection.
template <typename Scalar>
ad::Var<Scalar> vema_scores(ad::Var<Scalar> q_proj, ad::Var<Scalar> k_proj, ad::Var<Scalar> v_target,
                            const VemaParams<Scalar>& p, int head, const Mask& mask) {
  using namespace ad;
  const int d = static_cast<int>(q_proj.cols());
  if (k_proj.cols() != d) throw DimensionError("vema_scores: query/key widths differ");
  auto delta = vema_gate(v_target, p, head, d, mask);
  auto logits = matmul(cwise_product(q_proj, delta), transpose(k_proj));
  return masked_softmax(scale(logits, Scalar(1) / std::sqrt(Scalar(d))), mask);
}

// softmax_n((c - sum_m beta_m |q_m - k_nm|) / s) for one head.
template <typename Scalar>
ad::Var<Scalar> dba_scores(ad::Var<Scalar> q_proj, ad::Var<Scalar> k_proj, const DbaParams<Scalar>& p,
                           int head, const Mask& mask) {
  using namespace ad;
  const int d = static_cast<int>(q_proj.cols());
  if (k_proj.cols() != d) throw DimensionError("dba_scores: query/key widths differ");
  const DbaConstants k = dba_constants(d);
  auto beta = slice_cols(p.beta, Eigen::Index(head) * d, d);
  auto dist = abs(sub(broadcast_rows(q_proj, k_proj.rows()), k_proj));
  auto weighted = transpose(matmul(dist, transpose(beta)));  // 1xN
  auto logits = scale(add_scalar(scale(weighted, Scalar(-1)), Scalar(k.c)), Scalar(1.0 / k.s));
  return masked_softmax(logits, mask);
}

// a_n ∝ exp(w (tanh(V h_n) ⊙ sigmoid(U h_n))) over the instances h (NxC).
template <typename Scalar>
ad::Var<Scalar> gated_attention_scores(ad::Var<Scalar> h, const GatedAttentionParams<Scalar>& p,
                                       const Mask& mask) {
  using namespace ad;
  auto a = cwise_product(tanh(matmul(h, transpose(p.V))), sigmoid(matmul(h, transpose(p.U))));
  return masked_softmax(transpose(matmul(a, transpose(p.w))), mask);
}

// Row-wise softmax(Q K^T / sqrt(D)); Q: SxD, K: NxD.
template <typename Scalar>
ad::Var<Scalar> scaled_dot_scores(ad::Var<Scalar> q, ad::Var<Scalar> k, const Mask& mask) {
  using namespace ad;
  if (q.cols() != k.cols()) throw DimensionError("scaled_dot_scores: query/key widths differ");
  auto logits = matmul(q, transpose(k));
  return masked_softmax(scale(logits, Scalar(1) / std::sqrt(Scalar(q.cols()))), mask);
}

}  // namespace capmil
