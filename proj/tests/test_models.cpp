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


#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "capmil/eval.hpp"
#include "capmil/models.hpp"
#include "support.hpp"

using namespace capmil;
using capmil::testing::model_gradient_error;
using capmil::testing::random_exemplar;
using capmil::testing::random_matrix;

namespace {

ModelConfig small_config(Variant v, int channels = 8) {
  ModelConfig c;
  c.variant = v;
  c.channels = channels;
  c.heads = 2;
  return c;
}

// Perturbs every tensor away from its initializer so that identity matrices
// and unit LayerNorm scales do not mask a wrong gradient.
ModelParams perturbed(const ModelConfig& config, Rng& rng) {
  ModelParams p = init_params(config);
  for (auto& [name, m] : p.tensors) m += random_matrix(m.rows(), m.cols(), rng, 0.2);
  return p;
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("siamese similarity") {
    Tape t;
    Matrix q(1, 2), p(1, 2);
    q << 1, 2;
    p << 3, 4;
    auto ones = t.constant(Matrix::Ones(1, 2));
    CHECK(siamese_similarity(t.constant(q), t.constant(p), ones).item() == 11.0);
    CHECK(siamese_similarity(t.constant(q), t.constant(Matrix::Zero(1, 2)), ones).item() == 0.0);
  }

  TEST_CASE("bce loss") {
    CHECK(std::abs(bce_loss(0.5, 0) - std::log(2.0)) < 1e-12);
    CHECK(std::abs(bce_loss(0.5, 1) - std::log(2.0)) < 1e-12);
    CHECK(std::abs(bce_loss(0.9, 1) - 0.105360515657826) < 1e-12);
    CHECK(bce_loss(1.0, 1) < 1e-12);
    CHECK(bce_loss(0.0, 0) < 1e-12);
    CHECK(std::isfinite(bce_loss(0.0, 1)));
    CHECK_THROWS_AS(bce_loss(1.5, 1), ContractError);
  }

  TEST_CASE("a zero logit gives probability one half for every variant") {
    Rng rng(1);
    const Exemplar e = random_exemplar(8, 4, rng);
    for (Variant v : all_variants()) {
      CAPTURE(to_string(v));
      const ModelConfig config = small_config(v);
      ModelParams p = init_params(config);
      p.tensors.at("alpha").setZero();
      const Prediction out = predict(config, p, e);
      CHECK(out.logit == 0.0);
      CHECK(out.prob == 0.5);
    }
  }

  TEST_CASE("probabilities stay inside the open interval") {
    Rng rng(2);
    for (Variant v : all_variants()) {
      const ModelConfig config = small_config(v);
      ModelParams p = perturbed(config, rng);
      p.tensors.at("alpha") *= 1e4;
      const Prediction out = predict(config, p, random_exemplar(8, 5, rng));
      CHECK(out.prob > 0.0);
      CHECK(out.prob < 1.0);
      CHECK(std::abs(out.logit) <= kLogitClamp);
    }
  }

  TEST_CASE("variants export scores as documented") {
    Rng rng(3);
    const Exemplar e = random_exemplar(8, 6, rng);
    for (Variant v : all_variants()) {
      CAPTURE(to_string(v));
      const ModelConfig config = small_config(v);
      const Prediction out = predict(config, init_params(config), e);
      CHECK(out.scores.has_value() == config.exports_scores());
      if (out.scores) CHECK_NOTHROW((AttentionScores{*out.scores, full_mask(6)}.validate()));
    }
  }

  TEST_CASE("every variant is invariant to the order of the bag") {
    Rng rng(4);
    for (Variant v : all_variants()) {
      CAPTURE(to_string(v));
      const ModelConfig config = small_config(v);
      const ModelParams p = perturbed(config, rng);
      for (int i = 0; i < 5; ++i) {
        const Exemplar e = random_exemplar(8, 2 + i * 2, rng);
        CHECK(permutation_invariance_check(config, p, e, 10, 77 + i) < 1e-9);
      }
      CHECK(permutation_invariance_check(config, p, random_exemplar(8, 1, rng), 5, 9) == 0.0);
    }
  }

  TEST_CASE("reverse mode matches central differences for every variant") {
    Rng rng(5);
    for (Variant v : all_variants()) {
      for (int n : {1, 3, 7}) {
        CAPTURE(to_string(v));
        CAPTURE(n);
        const ModelConfig config = small_config(v);
        const ModelParams p = perturbed(config, rng);
        const auto [name, err] = model_gradient_error(config, p, random_exemplar(8, n, rng));
        CAPTURE(name);
        CHECK(err < 1e-4);
      }
    }
  }

  TEST_CASE("the unclamped similarity keeps a training signal past the clamp") {
    Rng rng(6);
    ModelConfig config = small_config(Variant::gabmil);
    ModelParams p = init_params(config);
    const Exemplar e = random_exemplar(8, 3, rng);
    p.tensors.at("alpha") *= 1e3;
    // Pick the label that disagrees with the saturated prediction.
    const int label = predict(config, p, e).logit > 0 ? 0 : 1;
    CHECK(std::abs(predict(config, p, e).logit) == kLogitClamp);
    const LossGrad lg = loss_and_grad(config, p, e.query, e.target, full_mask(3), label);
    CHECK(lg.grads.at("alpha").norm() > 0.0);
  }

  TEST_CASE("logit bias only exists when enabled") {
    ModelConfig config = small_config(Variant::baseline);
    CHECK(init_params(config).tensors.count("logit_bias") == 1);
    config.logit_bias = false;
    CHECK(init_params(config).tensors.count("logit_bias") == 0);
  }

  TEST_CASE("pairs carry the key labels and rebuild the bag label") {
    Rng rng(7);
    Exemplar e = random_exemplar(4, 3, rng);
    e.key_mask = std::vector<bool>{false, true, false};
    e.label = 1;
    auto pairs = exemplar_to_pairs(e);
    REQUIRE(pairs.size() == 3);
    CHECK(*pairs[0].label == 0);
    CHECK(*pairs[1].label == 1);
    CHECK(pairs[1].instance.isApprox(e.target.row(1)));
    CHECK(bag_label_from_pairs(pairs) == 1);
    e.key_mask = std::vector<bool>(3, false);
    CHECK(bag_label_from_pairs(exemplar_to_pairs(e)) == 0);
    e.key_mask.reset();
    CHECK_FALSE(bag_label_from_pairs(exemplar_to_pairs(e)).has_value());
  }

  TEST_CASE("config round trip through key value text") {
    ModelConfig c = small_config(Variant::cap_dba, 12);
    c.heads = 3;
    c.use_sce = false;
    c.layernorm = LayerNormPlacement::post_aggregation;
    c.logit_bias = false;
    c.seed = 99;
    KeyValueConfig kv;
    write_model_config(kv, c);
    const ModelConfig back = read_model_config(KeyValueConfig::parse(kv.to_string()));
    CHECK(back.variant == c.variant);
    CHECK(back.channels == 12);
    CHECK(back.heads == 3);
    CHECK(back.use_multihead_projection);
    CHECK_FALSE(back.use_sce);
    CHECK(back.layernorm == LayerNormPlacement::post_aggregation);
    CHECK_FALSE(back.logit_bias);
    CHECK(back.seed == 99);
    c.heads = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(parse_variant("lstm"), ConfigError);
  }

  TEST_CASE("checkpoints round trip bit for bit") {
    Rng rng(8);
    const auto dir = std::filesystem::temp_directory_path() / "capmil_ckpt_test";
    std::filesystem::create_directories(dir);
    for (Variant v : all_variants()) {
      const ModelConfig config = small_config(v);
      const ModelParams p = perturbed(config, rng);
      const std::string path = (dir / (to_string(v) + ".bin")).string();
      save_checkpoint(path, config, p);
      const auto [c2, p2] = load_checkpoint(path);
      CHECK(c2.variant == v);
      REQUIRE(p2.tensors.size() == p.tensors.size());
      for (const auto& [name, m] : p.tensors) CHECK((p2.tensors.at(name).array() == m.array()).all());
    }
    const std::string bad = (dir / "truncated.bin").string();
    {
      std::ifstream in((dir / "cap_vema.bin").string(), std::ios::binary);
      std::string bytes((std::istreambuf_iterator<char>(in)), {});
      std::ofstream out(bad, std::ios::binary);
      out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), Error);
    CHECK_THROWS_AS(load_checkpoint((dir / "missing.bin").string()), IoError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("dimension mismatches are rejected") {
    Rng rng(9);
    const ModelConfig config = small_config(Variant::cap_vema);
    const Exemplar e = random_exemplar(6, 3, rng);
    CHECK_THROWS_AS(predict(config, init_params(config), e), DimensionError);
  }
}
