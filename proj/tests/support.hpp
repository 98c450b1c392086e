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


// Helpers shared by the unit suites and the acceptance runner: random
// fixtures and the independent oracles the library is checked against.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "capmil/autodiff.hpp"
#include "capmil/exemplar.hpp"
#include "capmil/models.hpp"
#include "capmil/params.hpp"

namespace capmil::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// At least one position stays valid.
inline Mask random_mask(std::size_t n, Rng& rng) {
  std::bernoulli_distribution coin(0.7);
  Mask m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = coin(rng);
  m[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = true;
  return m;
}

inline Exemplar random_exemplar(int channels, int n, Rng& rng, const std::string& id = "r") {
  Exemplar e;
  e.id = id;
  e.query = random_matrix(1, channels, rng);
  e.target = random_matrix(n, channels, rng);
  std::vector<bool> keys(n);
  std::bernoulli_distribution coin(0.3);
  for (int i = 0; i < n; ++i) keys[i] = coin(rng);
  e.label = std::any_of(keys.begin(), keys.end(), [](bool b) { return b; }) ? 1 : 0;
  e.key_mask = keys;
  return e;
}

// ||a - b|| / max(||a||, ||b||, 1e-8). Taken per tensor since single
// entries near zero carry mostly rounding noise; the floor keeps a gradient
// that is exactly zero from dividing difference noise by itself.
inline double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

// Worst relative error between reverse-mode gradients of f and central
// differences, over every input tensor.
inline double gradient_error(const ScalarFn& f, std::vector<Matrix> inputs, double h = 1e-6) {
  std::vector<Matrix> analytic;
  {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    tape.backward(f(tape, vars));
    for (auto v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&]() {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (const auto& m : inputs) vars.push_back(tape.constant(m));
    return f(tape, vars).item();
  };
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      double& x = inputs[k].data()[i];
      const double saved = x;
      x = saved + h;
      const double up = eval();
      x = saved - h;
      const double down = eval();
      x = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, relative_error(analytic[k], numeric));
  }
  return worst;
}

// Same check against the model loss, one parameter tensor at a time.
// Returns the worst tensor and its error.
inline std::pair<std::string, double> model_gradient_error(const ModelConfig& config, ModelParams params,
                                                           const Exemplar& e, double h = 1e-6) {
  const Mask mask = full_mask(e.bag_size());
  const LossGrad lg = loss_and_grad(config, params, e.query, e.target, mask, e.label);
  std::pair<std::string, double> worst{"", 0.0};
  for (auto& [name, tensor] : params.tensors) {
    Matrix numeric(tensor.rows(), tensor.cols());
    for (Eigen::Index i = 0; i < tensor.size(); ++i) {
      double& x = tensor.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_and_grad(config, params, e.query, e.target, mask, e.label).loss;
      x = saved - h;
      const double down = loss_and_grad(config, params, e.query, e.target, mask, e.label).loss;
      x = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double err = relative_error(lg.grads.at(name), numeric);
    if (err > worst.second || worst.first.empty()) worst = {name, err};
  }
  return worst;
}

// Reference AUROC by counting every (positive, negative) pair.
inline double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

// Rank of item i in a stable descending sort: items with a larger score, or
// an equal score and a smaller index, come first.
inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++positives;
    int above = 0;
    int hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      const bool ahead = s[j] > s[i] || (s[j] == s[i] && j <= i);
      if (!ahead) continue;
      ++above;
      hits += y[j];
    }
    total += static_cast<double>(hits) / above;
  }
  return total / positives;
}

// Tied variant: the cut for item i includes every item scoring >= s[i].
inline double brute_ap_tied(const std::vector<double>& s, const std::vector<int>& y) {
  double total = 0;
  int positives = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    ++positives;
    int above = 0;
    int hits = 0;
    for (std::size_t j = 0; j < s.size(); ++j)
      if (s[j] >= s[i]) {
        ++above;
        hits += y[j];
      }
    total += static_cast<double>(hits) / above;
  }
  return total / positives;
}

}  // namespace capmil::testing
