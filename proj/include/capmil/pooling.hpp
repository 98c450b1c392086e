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

// Bag poolers. Each turns the query (1xC) and the bag (NxC, padded rows
// masked out) into the Siamese twin outputs (vP, vQ) and, where the pooler
// has a notion of attention, a heads x N matrix of scores.

#include <array>
#include <optional>
#include <string>

#include "capmil/attention.hpp"
#include "capmil/params.hpp"

namespace capmil {

using Var = ad::Var<double>;
using Tape = ad::Tape<double>;

enum class LayerNormPlacement { pre_aggregation, post_aggregation, none };
enum class AttentionKind { vema, dba };

std::string to_string(LayerNormPlacement p);
LayerNormPlacement parse_layernorm_placement(const std::string& s);

struct PoolOutput {
  Var vP;
  Var vQ;
  std::optional<Matrix> scores;
};

struct LayerNormParams {
  Var scale, shift;
};

// ---------------------------------------------------------------------------
// Cross-attention pooling

struct CapOptions {
  int channels = 64;
  int heads = 2;
  AttentionKind attention = AttentionKind::vema;
  bool use_multihead_projection = true;
  bool use_sce = true;
  LayerNormPlacement layernorm = LayerNormPlacement::pre_aggregation;

  // Without the multi-head projection there is a single head over all C
  // channels.
  int effective_heads() const { return use_multihead_projection ? heads : 1; }
  int head_dim() const { return channels / effective_heads(); }
};

// Squeeze-and-co-excitation parameters. J (CxC) and J_bias are shared; head j
// owns columns [jD, (j+1)D) of M (CxC) and M_bias (1xC).
struct MhsceParams {
  Var J, J_bias, M, M_bias;
};

struct CapParams {
  CapOptions options;
  std::optional<Var> W;  // CxC, head j = columns [jD, (j+1)D)
  std::optional<VemaParams<double>> vema;
  std::optional<DbaParams<double>> dba;
  std::optional<MhsceParams> sce;
  std::optional<LayerNormParams> ln;  // 1xC; sliced per head when pre-aggregation
};

// gate_j = sigmoid(relu(mean(query) J + J_bias) M_j + M_bias_j). The squeeze
// averages over the instance axis, which is the query itself.
Var mhsce(Var query, const MhsceParams& p, int head, int head_dim);

PoolOutput cap_pool(Var query, Var target, const CapParams& p, const Mask& mask);

void init_cap(ParamMap& params, const CapOptions& options, Rng& rng);
CapParams bind_cap(ParamBinding& binding, const CapOptions& options);

// ---------------------------------------------------------------------------
// Gated-attention MIL pooling: vP = scores * target, vQ = query.

PoolOutput gabmil_pool(Var query, Var target, const GatedAttentionParams<double>& p, const Mask& mask);

void init_gabmil(ParamMap& params, int channels, Rng& rng);
GatedAttentionParams<double> bind_gabmil(ParamBinding& binding);

// ---------------------------------------------------------------------------
// Transformer-style blocks shared by the PMA and MSA comparators.

struct AttentionBlockParams {
  Var Wq, Wk, Wv, Wo;  // CxC, head j = columns [jD, (j+1)D) of Wq/Wk/Wv
  Var W1, b1, W2, b2;  // feed-forward C -> F -> C
  LayerNormParams ln1, ln2;
};

// concat_j(softmax(Q_j K_j^T / sqrt(D)) V_j) Wo. When `scores` is non-null the
// attention rows of query 0 are written to it (heads x N).
Var multihead_attention(Var queries, Var keys_values, const AttentionBlockParams& p, int heads,
                        const Mask& mask, Matrix* scores = nullptr);

// H = LN1(queries + MHA); out = LN2(H + FF(H)).
Var attention_block(Var queries, Var keys_values, const AttentionBlockParams& p, int heads,
                    const Mask& mask, Matrix* scores = nullptr);

void init_attention_block(ParamMap& params, const std::string& prefix, int channels, int ff_width,
                          Rng& rng);
AttentionBlockParams bind_attention_block(ParamBinding& binding, const std::string& prefix);

// Pooling by multi-head attention with the seed P and the query as two seeds.
struct PmaParams {
  Var seed;  // 1xC
  AttentionBlockParams block;
  int heads = 1;
};

PoolOutput pma_pool(Var query, Var target, const PmaParams& p, const Mask& mask);

void init_pma(ParamMap& params, int channels, Rng& rng);
PmaParams bind_pma(ParamBinding& binding, int heads);

// Two stacked self-attention encoder layers over (CLS, query, bag...). No
// scores are exported.
struct MsaParams {
  Var cls;  // 1xC
  std::array<AttentionBlockParams, 2> layers;
  int heads = 1;
};

PoolOutput msa_pool(Var query, Var target, const MsaParams& p, const Mask& mask);

void init_msa(ParamMap& params, int channels, Rng& rng);
MsaParams bind_msa(ParamBinding& binding, int heads);

// ---------------------------------------------------------------------------
// Max-of-pairs baseline.

struct BaselineOutput {
  Var logit;       // 1x1, masked max of the pairwise similarities
  Matrix weights;  // 1xN argmax indicator (the implicit attention)
};

BaselineOutput baseline_score(Var query, Var target, Var alpha, const Mask& mask);

// ---------------------------------------------------------------------------
// MI-Net: instance MLP followed by element-wise max pooling.

struct MinetParams {
  Var W1, b1, W2, b2;
};

Var minet_pool(Var target, const MinetParams& p, const Mask& mask);

void init_minet(ParamMap& params, int channels, Rng& rng);
MinetParams bind_minet(ParamBinding& binding);

}  // namespace capmil
