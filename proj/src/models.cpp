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

#include "capmil/models.hpp"

#include <algorithm>
#include <cmath>

namespace capmil {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::gabmil: return "gabmil";
    case Variant::pma: return "pma";
    case Variant::msa: return "msa";
    case Variant::minet: return "minet";
    case Variant::cap_vema: return "cap_vema";
    case Variant::cap_dba: return "cap_dba";
  }
  return "unknown";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw ConfigError("unknown model variant '" + s + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> kAll = {Variant::baseline, Variant::gabmil,   Variant::pma,    Variant::msa,
                                            Variant::minet,    Variant::cap_vema, Variant::cap_dba};
  return kAll;
}

CapOptions ModelConfig::cap_options() const {
  CapOptions o;
  o.channels = channels;
  o.heads = heads;
  o.attention = variant == Variant::cap_dba ? AttentionKind::dba : AttentionKind::vema;
  o.use_multihead_projection = use_multihead_projection;
  o.use_sce = use_sce;
  o.layernorm = layernorm;
  return o;
}

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (heads < 1) throw ConfigError("heads must be >= 1");
  if (channels % heads != 0)
    throw ConfigError("heads (" + std::to_string(heads) + ") must divide channels (" + std::to_string(channels) + ")");
}

void write_model_config(KeyValueConfig& kv, const ModelConfig& c) {
  kv.set("variant", to_string(c.variant));
  kv.set("channels", std::to_string(c.channels));
  kv.set("heads", std::to_string(c.heads));
  kv.set("use_multihead_projection", c.use_multihead_projection ? "true" : "false");
  kv.set("use_sce", c.use_sce ? "true" : "false");
  kv.set("layernorm_placement", to_string(c.layernorm));
  kv.set("logit_bias", c.logit_bias ? "true" : "false");
  kv.set("seed", std::to_string(c.seed));
}

ModelConfig read_model_config(const KeyValueConfig& kv, const ModelConfig& d) {
  ModelConfig c;
  c.variant = parse_variant(kv.get_string("variant", to_string(d.variant)));
  c.channels = kv.get_int("channels", d.channels);
  c.heads = kv.get_int("heads", d.heads);
  c.use_multihead_projection = kv.get_bool("use_multihead_projection", d.use_multihead_projection);
  c.use_sce = kv.get_bool("use_sce", d.use_sce);
  c.layernorm = parse_layernorm_placement(kv.get_string("layernorm_placement", to_string(d.layernorm)));
  c.logit_bias = kv.get_bool("logit_bias", d.logit_bias);
  c.seed = kv.get_u64("seed", d.seed);
  c.validate();
  return c;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0x1417));
  const int c = config.channels;
  ModelParams p;
  p.tensors["alpha"] = Matrix::Ones(1, c);
  if (config.logit_bias) p.tensors["logit_bias"] = Matrix::Zero(1, 1);
  p.tensors["input_ln.scale"] = Matrix::Ones(1, c);
  p.tensors["input_ln.shift"] = Matrix::Zero(1, c);
  switch (config.variant) {
    case Variant::baseline: break;
    case Variant::gabmil: init_gabmil(p.tensors, c, rng); break;
    case Variant::pma: init_pma(p.tensors, c, rng); break;
    case Variant::msa: init_msa(p.tensors, c, rng); break;
    case Variant::minet: init_minet(p.tensors, c, rng); break;
    case Variant::cap_vema:
    case Variant::cap_dba: init_cap(p.tensors, config.cap_options(), rng); break;
  }
  return p;
}

Var siamese_similarity(Var vQ, Var vP, Var alpha) {
  return sum(cwise_product(cwise_product(vQ, alpha), vP));
}

ForwardOutput forward(ParamBinding& b, const ModelConfig& config, const Matrix& query, const Matrix& target,
                      const Mask& mask) {
  const int c = config.channels;
  if (query.rows() != 1 || query.cols() != c || target.cols() != c)
    throw DimensionError("forward: expected a 1x" + std::to_string(c) + " query and an Nx" + std::to_string(c) +
                         " bag");
  ad::detail::require_mask("forward", mask, target.rows());

  Tape& t = b.tape();
  const LayerNormParams in_ln{b["input_ln.scale"], b["input_ln.shift"]};
  Var q = layer_norm(t.constant(query), in_ln.scale, in_ln.shift);
  Var x = mask_rows(layer_norm(t.constant(target), in_ln.scale, in_ln.shift), mask);
  Var alpha = b["alpha"];

  ForwardOutput out;
  Var sim;
  switch (config.variant) {
    case Variant::baseline: {
      auto r = baseline_score(q, x, alpha, mask);
      sim = r.logit;
      out.scores = std::move(r.weights);
      break;
    }
    case Variant::gabmil: {
      auto r = gabmil_pool(q, x, bind_gabmil(b), mask);
      sim = siamese_similarity(r.vQ, r.vP, alpha);
      out.scores = std::move(r.scores);
      break;
    }
    case Variant::pma: {
      auto r = pma_pool(q, x, bind_pma(b, config.heads), mask);
      sim = siamese_similarity(r.vQ, r.vP, alpha);
      out.scores = std::move(r.scores);
      break;
    }
    case Variant::msa: {
      auto r = msa_pool(q, x, bind_msa(b, config.heads), mask);
      sim = siamese_similarity(r.vQ, r.vP, alpha);
      break;
    }
    case Variant::minet: {
      Var vP = minet_pool(x, bind_minet(b), mask);
      sim = siamese_similarity(q, vP, alpha);
      break;
    }
    case Variant::cap_vema:
    case Variant::cap_dba: {
      auto r = cap_pool(q, x, bind_cap(b, config.cap_options()), mask);
      sim = siamese_similarity(r.vQ, r.vP, alpha);
      out.scores = std::move(r.scores);
      break;
    }
  }
  if (config.logit_bias) sim = sim + b["logit_bias"];
  out.similarity = sim;
  out.logit = clamp(sim, -kLogitClamp, kLogitClamp);
  out.prob = sigmoid(out.logit);
  return out;
}

Prediction predict(const ModelConfig& config, const ModelParams& params, const Matrix& query, const Matrix& target,
                   const Mask& mask) {
  Tape tape;
  ParamBinding b(tape, params.tensors);
  auto f = forward(b, config, query, target, mask);
  return {f.prob.item(), f.logit.item(), std::move(f.scores)};
}

Prediction predict(const ModelConfig& config, const ModelParams& params, const Exemplar& e) {
  return predict(config, params, e.query, e.target, full_mask(e.target.rows()));
}

LossGrad loss_and_grad(const ModelConfig& config, const ModelParams& params, const Matrix& query,
                       const Matrix& target, const Mask& mask, int label) {
  if (label != 0 && label != 1) throw ContractError("label must be 0 or 1");
  Tape tape;
  ParamBinding b(tape, params.tensors);
  auto f = forward(b, config, query, target, mask);
  // The clamp has zero slope outside +-30; training on it would freeze any
  // model whose untrained similarities start beyond the clamp.
  Var loss = bce_with_logits(f.similarity, label);
  tape.backward(loss);
  return {loss.item(), f.prob.item(), b.gradients()};
}

double bce_loss(double prob, int label) {
  if (!(prob >= 0.0 && prob <= 1.0)) throw ContractError("bce_loss: probability outside [0, 1]");
  double z = std::log(prob) - std::log1p(-prob);
  z = std::clamp(z, -kLogitClamp, kLogitClamp);
  const double m = label == 1 ? -z : z;
  return std::max(m, 0.0) + std::log1p(std::exp(-std::abs(m)));
}

std::vector<InstancePair> exemplar_to_pairs(const Exemplar& e) {
  std::vector<InstancePair> pairs;
  pairs.reserve(e.target.rows());
  for (Eigen::Index n = 0; n < e.target.rows(); ++n) {
    InstancePair p{e.query, e.target.row(n), std::nullopt};
    if (e.key_mask) p.label = (*e.key_mask)[n] ? 1 : 0;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::optional<int> bag_label_from_pairs(const std::vector<InstancePair>& pairs) {
  int label = 0;
  for (const auto& p : pairs) {
    if (!p.label) return std::nullopt;
    label = std::max(label, *p.label);
  }
  return label;
}

}  // namespace capmil
