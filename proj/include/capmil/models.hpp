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

// Full verification models: shared input LayerNorm, a pooler, the weighted
// product similarity head and a sigmoid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capmil/exemplar.hpp"
#include "capmil/kvconfig.hpp"
#include "capmil/pooling.hpp"

namespace capmil {

enum class Variant { baseline, gabmil, pma, msa, minet, cap_vema, cap_dba };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
const std::vector<Variant>& all_variants();

inline constexpr double kLogitClamp = 30.0;

struct ModelConfig {
  Variant variant = Variant::cap_vema;
  int channels = 64;
  int heads = 2;
  // Ablation flags; only the cap_* variants read them.
  bool use_multihead_projection = true;
  bool use_sce = true;
  LayerNormPlacement layernorm = LayerNormPlacement::pre_aggregation;
  // Learnable scalar added to the similarity. Without it the only offset
  // available is the input LayerNorm shift, which sits at a stationary point
  // while alpha > 0, so the decision threshold cannot move off zero. Turn it
  // off for the bias-free head.
  bool logit_bias = true;
  std::uint64_t seed = 0;

  bool is_cap() const { return variant == Variant::cap_vema || variant == Variant::cap_dba; }
  // MSA and MI-Net have no per-instance attention to evaluate.
  bool exports_scores() const { return variant != Variant::msa && variant != Variant::minet; }
  CapOptions cap_options() const;
  void validate() const;
};

// Keys: variant, channels, heads, use_multihead_projection, use_sce,
// layernorm_placement, logit_bias, seed.
void write_model_config(KeyValueConfig& kv, const ModelConfig& config);
ModelConfig read_model_config(const KeyValueConfig& kv, const ModelConfig& defaults = {});

struct ModelParams {
  ParamMap tensors;
};

ModelParams init_params(const ModelConfig& config);

// sum_i alpha_i vQ_i vP_i as a 1x1 value.
Var siamese_similarity(Var vQ, Var vP, Var alpha);

struct ForwardOutput {
  Var similarity;  // unclamped; the training loss reads this
  Var logit;       // clamped to +-kLogitClamp
  Var prob;
  std::optional<Matrix> scores;  // heads x N
};

ForwardOutput forward(ParamBinding& binding, const ModelConfig& config, const Matrix& query,
                      const Matrix& target, const Mask& mask);

struct Prediction {
  double prob = 0.5;
  double logit = 0;
  std::optional<Matrix> scores;
};

Prediction predict(const ModelConfig& config, const ModelParams& params, const Matrix& query,
                   const Matrix& target, const Mask& mask);
Prediction predict(const ModelConfig& config, const ModelParams& params, const Exemplar& e);

struct LossGrad {
  double loss = 0;
  double prob = 0;
  ParamMap grads;
};

LossGrad loss_and_grad(const ModelConfig& config, const ModelParams& params, const Matrix& query,
                       const Matrix& target, const Mask& mask, int label);

// -(y ln p + (1-y) ln(1-p)), evaluated through the clamped logit of p.
double bce_loss(double prob, int label);

struct InstancePair {
  Matrix query;     // 1xC
  Matrix instance;  // 1xC
  std::optional<int> label;
};

// Rewrites a bag as N (query, instance) pairs; pair labels come from the key
// mask when present.
std::vector<InstancePair> exemplar_to_pairs(const Exemplar& e);

// 1 iff some pair is labeled 1; nullopt when the pairs carry no labels.
std::optional<int> bag_label_from_pairs(const std::vector<InstancePair>& pairs);

// ---------------------------------------------------------------------------
// Checkpoints: little-endian binary archive of the config and every tensor.

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params);
std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path);

}  // namespace capmil
