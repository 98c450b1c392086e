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

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "capmil/autodiff.hpp"

namespace capmil {

// Named learnable tensors of one model. Ordered so that iteration (and hence
// checkpoints and optimizer updates) is deterministic.
using ParamMap = std::map<std::string, Matrix>;

using Rng = std::mt19937_64;

// Binds a ParamMap onto a tape. Each name becomes one parameter leaf on
// first use; the map must outlive the tape.
class ParamBinding {
 public:
  ParamBinding(ad::Tape<double>& tape, const ParamMap& params) : tape_(tape), params_(params) {}

  ad::Var<double> operator[](const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  ad::Tape<double>& tape() { return tape_; }

  // Gradient for every entry of the map after tape.backward(); zeros for
  // parameters the graph never touched.
  ParamMap gradients();

 private:
  ad::Tape<double>& tape_;
  const ParamMap& params_;
  std::map<std::string, ad::Var<double>> bound_;
};

std::size_t parameter_count(const ParamMap& params);

Matrix glorot_uniform(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng);
Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng);

// Deterministic 64-bit seed derivation (splitmix64 over the inputs).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0);

}  // namespace capmil
