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

#include "capmil/pooling.hpp"

#include <cmath>
#include <vector>

namespace capmil {

std::string to_string(LayerNormPlacement p) {
  switch (p) {
    case LayerNormPlacement::pre_aggregation: return "pre_aggregation";
    case LayerNormPlacement::post_aggregation: return "post_aggregation";
    case LayerNormPlacement::none: return "none";
  }
  return "none";
}

LayerNormPlacement parse_layernorm_placement(const std::string& s) {
  if (s == "pre_aggregation" || s == "pre") return LayerNormPlacement::pre_aggregation;
  if (s == "post_aggregation" || s == "post") return LayerNormPlacement::post_aggregation;
  if (s == "none") return LayerNormPlacement::none;
  throw ConfigError("unknown layernorm placement '" + s + "'");
}

namespace {

Matrix zeros_row(int c) { return Matrix::Zero(1, c); }
Matrix ones_row(int c) { return Matrix::Ones(1, c); }

Var bias_rows(Var bias, Eigen::Index n) { return n == 1 ? bias : broadcast_rows(bias, n); }

Var head_slice(Var x, int heads, int head, int d) {
  return heads == 1 ? x : slice_cols(x, Eigen::Index(head) * d, d);
}

LayerNormParams bind_ln(ParamBinding& b, const std::string& prefix) {
  return {b[prefix + ".scale"], b[prefix + ".shift"]};
}

void init_ln(ParamMap& params, const std::string& prefix, int c) {
  params[prefix + ".scale"] = ones_row(c);
  params[prefix + ".shift"] = zeros_row(c);
}

// Glorot-initialized CxC matrix whose column blocks are the per-head CxD
// projections.
Matrix headwise_glorot(int c, int heads, Rng& rng) {
  const int d = c / heads;
  Matrix m(c, c);
  for (int j = 0; j < heads; ++j) m.middleCols(Eigen::Index(j) * d, d) = glorot_uniform(c, d, rng);
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------

Var mhsce(Var query, const MhsceParams& p, int head, int head_dim) {
  auto hidden = relu(add(matmul(query, p.J), p.J_bias));
  const int heads = static_cast<int>(p.M.cols()) / head_dim;
  auto m_j = head_slice(p.M, heads, head, head_dim);
  auto b_j = head_slice(p.M_bias, heads, head, head_dim);
  return sigmoid(add(matmul(hidden, m_j), b_j));
}

PoolOutput cap_pool(Var query, Var target, const CapParams& p, const Mask& mask) {
  const CapOptions& o = p.options;
  const int heads = o.effective_heads();
  const int d = o.head_dim();
  const Eigen::Index n = target.rows();
  ad::detail::require_mask("cap_pool", mask, n);
  if (query.cols() != o.channels || target.cols() != o.channels)
    throw DimensionError("cap_pool: expected " + std::to_string(o.channels) + " channels");

  Var q_proj = p.W ? matmul(query, *p.W) : query;
  Var k_proj = p.W ? matmul(target, *p.W) : target;

  std::vector<Var> out_p, out_q;
  Matrix scores(heads, n);
  for (int j = 0; j < heads; ++j) {
    Var q_j = head_slice(q_proj, heads, j, d);
    Var k_j = head_slice(k_proj, heads, j, d);
    Var s_j = p.vema ? vema_scores(q_j, k_j, target, *p.vema, j, mask) : dba_scores(q_j, k_j, *p.dba, j, mask);
    scores.row(j) = s_j.value();

    Var value = k_j;
    Var twin = q_j;
    if (p.sce) {
      Var gate = mhsce(query, *p.sce, j, d);
      value = cwise_product(value, bias_rows(gate, n));
      twin = cwise_product(twin, gate);
    }
    if (o.layernorm == LayerNormPlacement::pre_aggregation) {
      Var sc = head_slice(p.ln->scale, heads, j, d);
      Var sh = head_slice(p.ln->shift, heads, j, d);
      value = layer_norm(value, sc, sh);
      twin = layer_norm(twin, sc, sh);
    }
    out_p.push_back(matmul(s_j, mask_rows(value, mask)));
    out_q.push_back(twin);
  }
  Var vP = concat_cols(out_p);
  Var vQ = concat_cols(out_q);
  if (o.layernorm == LayerNormPlacement::post_aggregation) {
    vP = layer_norm(vP, p.ln->scale, p.ln->shift);
    vQ = layer_norm(vQ, p.ln->scale, p.ln->shift);
  }
  return {vP, vQ, std::move(scores)};
}

void init_cap(ParamMap& params, const CapOptions& o, Rng& rng) {
  const int c = o.channels;
  const int heads = o.effective_heads();
  if (o.use_multihead_projection) params["cap.W"] = Matrix::Identity(c, c);
  if (o.attention == AttentionKind::vema) {
    params["cap.vema.R"] = glorot_uniform(c, c, rng);
    params["cap.vema.R_bias"] = zeros_row(c);
    params["cap.vema.S"] = headwise_glorot(c, heads, rng);
    params["cap.vema.S_bias"] = zeros_row(c);
  } else {
    params["cap.dba.beta"] = ones_row(c);
  }
  if (o.use_sce) {
    params["cap.sce.J"] = glorot_uniform(c, c, rng);
    params["cap.sce.J_bias"] = zeros_row(c);
    params["cap.sce.M"] = headwise_glorot(c, heads, rng);
    params["cap.sce.M_bias"] = zeros_row(c);
  }
  if (o.layernorm != LayerNormPlacement::none) init_ln(params, "cap.ln", c);
}

CapParams bind_cap(ParamBinding& b, const CapOptions& o) {
  CapParams p;
  p.options = o;
  if (o.use_multihead_projection) p.W = b["cap.W"];
  if (o.attention == AttentionKind::vema) {
    p.vema = VemaParams<double>{b["cap.vema.R"], b["cap.vema.R_bias"], b["cap.vema.S"], b["cap.vema.S_bias"]};
  } else {
    p.dba = DbaParams<double>{b["cap.dba.beta"]};
  }
  if (o.use_sce) p.sce = MhsceParams{b["cap.sce.J"], b["cap.sce.J_bias"], b["cap.sce.M"], b["cap.sce.M_bias"]};
  if (o.layernorm != LayerNormPlacement::none) p.ln = bind_ln(b, "cap.ln");
  return p;
}

// ---------------------------------------------------------------------------

PoolOutput gabmil_pool(Var query, Var target, const GatedAttentionParams<double>& p, const Mask& mask) {
  Var scores = gated_attention_scores(target, p, mask);
  Var vP = matmul(scores, mask_rows(target, mask));
  return {vP, query, scores.value()};
}

void init_gabmil(ParamMap& params, int c, Rng& rng) {
  params["gabmil.V"] = glorot_uniform(c, c, rng);
  params["gabmil.U"] = glorot_uniform(c, c, rng);
  params["gabmil.w"] = glorot_uniform(1, c, rng);
}

GatedAttentionParams<double> bind_gabmil(ParamBinding& b) {
  return {b["gabmil.V"], b["gabmil.U"], b["gabmil.w"]};
}

// ---------------------------------------------------------------------------

Var multihead_attention(Var queries, Var keys_values, const AttentionBlockParams& p, int heads,
                        const Mask& mask, Matrix* scores) {
  const int c = static_cast<int>(queries.cols());
  const int d = c / heads;
  Var q = matmul(queries, p.Wq);
  Var k = matmul(keys_values, p.Wk);
  Var v = mask_rows(matmul(keys_values, p.Wv), mask);
  if (scores) scores->resize(heads, keys_values.rows());
  std::vector<Var> outs;
  for (int j = 0; j < heads; ++j) {
    Var a = scaled_dot_scores(head_slice(q, heads, j, d), head_slice(k, heads, j, d), mask);
    if (scores) scores->row(j) = a.value().row(0);
    outs.push_back(matmul(a, head_slice(v, heads, j, d)));
  }
  return matmul(concat_cols(outs), p.Wo);
}

Var attention_block(Var queries, Var keys_values, const AttentionBlockParams& p, int heads, const Mask& mask,
                    Matrix* scores) {
  Var h = layer_norm(add(queries, multihead_attention(queries, keys_values, p, heads, mask, scores)),
                     p.ln1.scale, p.ln1.shift);
  const Eigen::Index rows = h.rows();
  Var ff = relu(add(matmul(h, p.W1), bias_rows(p.b1, rows)));
  ff = add(matmul(ff, p.W2), bias_rows(p.b2, rows));
  return layer_norm(add(h, ff), p.ln2.scale, p.ln2.shift);
}

void init_attention_block(ParamMap& params, const std::string& prefix, int c, int ff_width, Rng& rng) {
  params[prefix + ".Wq"] = glorot_uniform(c, c, rng);
  params[prefix + ".Wk"] = glorot_uniform(c, c, rng);
  params[prefix + ".Wv"] = glorot_uniform(c, c, rng);
  params[prefix + ".Wo"] = glorot_uniform(c, c, rng);
  params[prefix + ".ff.W1"] = glorot_uniform(c, ff_width, rng);
  params[prefix + ".ff.b1"] = zeros_row(ff_width);
  params[prefix + ".ff.W2"] = glorot_uniform(ff_width, c, rng);
  params[prefix + ".ff.b2"] = zeros_row(c);
  init_ln(params, prefix + ".ln1", c);
  init_ln(params, prefix + ".ln2", c);
}

AttentionBlockParams bind_attention_block(ParamBinding& b, const std::string& prefix) {
  return {b[prefix + ".Wq"],    b[prefix + ".Wk"],    b[prefix + ".Wv"],    b[prefix + ".Wo"],
          b[prefix + ".ff.W1"], b[prefix + ".ff.b1"], b[prefix + ".ff.W2"], b[prefix + ".ff.b2"],
          bind_ln(b, prefix + ".ln1"), bind_ln(b, prefix + ".ln2")};
}

// ---------------------------------------------------------------------------

PoolOutput pma_pool(Var query, Var target, const PmaParams& p, const Mask& mask) {
  ad::detail::require_mask("pma_pool", mask, target.rows());
  Var seeds = concat_rows(std::vector<Var>{p.seed, query});
  Matrix scores;
  Var out = attention_block(seeds, target, p.block, p.heads, mask, &scores);
  return {slice_rows(out, 0, 1), slice_rows(out, 1, 1), std::move(scores)};
}

void init_pma(ParamMap& params, int c, Rng& rng) {
  params["pma.seed"] = normal_matrix(1, c, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  init_attention_block(params, "pma", c, c, rng);
}

PmaParams bind_pma(ParamBinding& b, int heads) {
  return {b["pma.seed"], bind_attention_block(b, "pma"), heads};
}

// ---------------------------------------------------------------------------

PoolOutput msa_pool(Var query, Var target, const MsaParams& p, const Mask& mask) {
  ad::detail::require_mask("msa_pool", mask, target.rows());
  Mask seq_mask;
  seq_mask.reserve(mask.size() + 2);
  seq_mask.push_back(true);
  seq_mask.push_back(true);
  seq_mask.insert(seq_mask.end(), mask.begin(), mask.end());
  Var x = concat_rows(std::vector<Var>{p.cls, query, target});
  for (const auto& layer : p.layers) x = attention_block(x, x, layer, p.heads, seq_mask);
  return {slice_rows(x, 0, 1), slice_rows(x, 1, 1), std::nullopt};
}

void init_msa(ParamMap& params, int c, Rng& rng) {
  params["msa.cls"] = normal_matrix(1, c, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  init_attention_block(params, "msa.l0", c, 2 * c, rng);
  init_attention_block(params, "msa.l1", c, 2 * c, rng);
}

MsaParams bind_msa(ParamBinding& b, int heads) {
  return {b["msa.cls"], {bind_attention_block(b, "msa.l0"), bind_attention_block(b, "msa.l1")}, heads};
}

// ---------------------------------------------------------------------------

BaselineOutput baseline_score(Var query, Var target, Var alpha, const Mask& mask) {
  Var sims = matmul(cwise_product(query, alpha), transpose(target));  // 1xN
  Var logit = masked_max_rows(transpose(sims), mask);
  return {logit, argmax_indicator(sims.value(), mask)};
}

// ---------------------------------------------------------------------------

Var minet_pool(Var target, const MinetParams& p, const Mask& mask) {
  const Eigen::Index n = target.rows();
  Var h = relu(add(matmul(target, p.W1), bias_rows(p.b1, n)));
  h = add(matmul(h, p.W2), bias_rows(p.b2, n));
  return masked_max_rows(h, mask);
}

void init_minet(ParamMap& params, int c, Rng& rng) {
  params["minet.W1"] = glorot_uniform(c, c, rng);
  params["minet.b1"] = zeros_row(c);
  params["minet.W2"] = glorot_uniform(c, c, rng);
  params["minet.b2"] = zeros_row(c);
}

MinetParams bind_minet(ParamBinding& b) {
  return {b["minet.W1"], b["minet.b1"], b["minet.W2"], b["minet.b2"]};
}

}  // namespace capmil
