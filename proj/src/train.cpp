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

#include "capmil/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace capmil {

LrSchedule LrSchedule::parse(const std::string& text) {
  LrSchedule s;
  for (const auto& part : split(text, ',')) {
    if (part.empty()) continue;
    const auto colon = part.find(':');
    if (colon == std::string::npos) throw ConfigError("lr_schedule: expected 'epoch:lr', got '" + part + "'");
    const std::string until = trim(part.substr(0, colon));
    const std::string lr = trim(part.substr(colon + 1));
    LrSegment seg;
    try {
      seg.until_epoch = until == "inf" ? std::numeric_limits<int>::max() : std::stoi(until);
      seg.lr = std::stod(lr);
    } catch (const std::exception&) {
      throw ConfigError("lr_schedule: cannot parse '" + part + "'");
    }
    s.segments.push_back(seg);
  }
  s.validate();
  return s;
}

std::string LrSchedule::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out += ",";
    out += (i + 1 == segments.size() ? std::string("inf") : std::to_string(segments[i].until_epoch)) + ":" +
           format_double(segments[i].lr);
  }
  return out;
}

void LrSchedule::validate() const {
  if (segments.empty()) throw ConfigError("lr_schedule: no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].lr > 0)) throw ConfigError("lr_schedule: learning rates must be positive");
    if (i > 0 && segments[i].until_epoch <= segments[i - 1].until_epoch)
      throw ConfigError("lr_schedule: thresholds must be strictly increasing");
  }
}

double lr_schedule(int epoch, const LrSchedule& schedule) {
  for (std::size_t i = 0; i + 1 < schedule.segments.size(); ++i)
    if (epoch < schedule.segments[i].until_epoch) return schedule.segments[i].lr;
  return schedule.segments.back().lr;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(rho >= 0 && rho < 1)) throw ConfigError("rho must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  schedule.validate();
}

void write_train_config(KeyValueConfig& kv, const TrainConfig& c) {
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("lr_schedule", c.schedule.to_string());
  kv.set("patience", std::to_string(c.patience));
  kv.set("max_epochs", std::to_string(c.max_epochs));
  kv.set("rho", format_double(c.rho));
  kv.set("eps", format_double(c.eps));
  kv.set("seed", std::to_string(c.seed));
}

TrainConfig read_train_config(const KeyValueConfig& kv, const TrainConfig& d) {
  TrainConfig c;
  c.batch_size = kv.get_int("batch_size", d.batch_size);
  if (auto s = kv.get("lr_schedule")) c.schedule = LrSchedule::parse(*s);
  else c.schedule = d.schedule;
  c.patience = kv.get_int("patience", d.patience);
  c.max_epochs = kv.get_int("max_epochs", d.max_epochs);
  c.rho = kv.get_double("rho", d.rho);
  c.eps = kv.get_double("eps", d.eps);
  c.seed = kv.get_u64("seed", d.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

void rmsprop_step(ParamMap& params, const ParamMap& grads, OptimizerState& state) {
  for (auto& [name, theta] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    auto [it, fresh] = state.accumulators.try_emplace(name, Matrix::Zero(theta.rows(), theta.cols()));
    Matrix& s = it->second;
    s = state.rho * s + (1.0 - state.rho) * g->second.cwiseAbs2();
    theta.array() -= state.lr * g->second.array() / (s.array().sqrt() + state.eps);
  }
}

// ---------------------------------------------------------------------------

BagBatch make_batch(const std::vector<Exemplar>& dataset, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ContractError("make_batch: empty batch");
  const Eigen::Index c = dataset[indices.front()].query.cols();
  Eigen::Index n_max = 0;
  for (auto i : indices) n_max = std::max(n_max, dataset[i].target.rows());

  BagBatch b;
  b.queries.resize(static_cast<Eigen::Index>(indices.size()), c);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Exemplar& e = dataset[indices[k]];
    if (e.query.cols() != c) throw DimensionError("make_batch: exemplars differ in width");
    b.queries.row(static_cast<Eigen::Index>(k)) = e.query;
    Matrix padded = Matrix::Zero(n_max, c);
    padded.topRows(e.target.rows()) = e.target;
    Mask mask(static_cast<std::size_t>(n_max), false);
    std::fill(mask.begin(), mask.begin() + e.target.rows(), true);
    b.targets.push_back(std::move(padded));
    b.masks.push_back(std::move(mask));
    b.labels.push_back(e.label);
    b.source.push_back(indices[k]);
  }
  return b;
}

std::vector<BagBatch> make_batches(const std::vector<Exemplar>& dataset, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<BagBatch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.push_back(make_batch(dataset, std::vector<std::size_t>(order.begin() + start, order.begin() + end)));
  }
  return out;
}

BatchLoss batch_loss_and_grad(const ModelConfig& config, const ModelParams& params, const BagBatch& batch) {
  BatchLoss out;
  for (const auto& [name, m] : params.tensors) out.grads.emplace(name, Matrix::Zero(m.rows(), m.cols()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    auto lg = loss_and_grad(config, params, batch.queries.row(static_cast<Eigen::Index>(k)), batch.targets[k],
                            batch.masks[k], batch.labels[k]);
    out.loss += lg.loss;
    for (auto& [name, g] : out.grads) g += lg.grads.at(name);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (auto& [_, g] : out.grads) g *= inv;
  return out;
}

double accuracy(const ModelConfig& config, const ModelParams& params, const std::vector<Exemplar>& data,
                double threshold) {
  if (data.empty()) throw ConfigError("accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& e : data) {
    const int pred = predict(config, params, e).prob >= threshold ? 1 : 0;
    correct += pred == e.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

bool EarlyStopping::update(int epoch, double val_acc) {
  if (best_epoch_ < 0 || val_acc > best_) {
    best_ = val_acc;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

TrainResult train(const ModelConfig& config, ModelParams params, const std::vector<Exemplar>& train_set,
                  const std::vector<Exemplar>& validation_set, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  if (train_set.empty()) throw ConfigError("train: empty training split");
  if (validation_set.empty()) throw ConfigError("train: empty validation split");

  TrainResult result;
  OptimizerState opt;
  opt.rho = tc.rho;
  opt.eps = tc.eps;
  EarlyStopping stopper(tc.patience);

  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    opt.lr = lr_schedule(epoch, tc.schedule);
    Rng rng(derive_seed(tc.seed, 0x7a11, static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0;
    std::size_t seen = 0;
    try {
      for (const auto& batch : make_batches(train_set, tc.batch_size, rng)) {
        auto bl = batch_loss_and_grad(config, params, batch);
        if (!std::isfinite(bl.loss)) throw NumericError("non-finite training loss");
        rmsprop_step(params.tensors, bl.grads, opt);
        loss_sum += bl.loss * static_cast<double>(batch.size());
        seen += batch.size();
      }
    } catch (const NumericError& ex) {
      throw NumericError("epoch " + std::to_string(epoch) + ": " + ex.what());
    }

    EpochRecord rec{epoch, opt.lr, loss_sum / static_cast<double>(seen), accuracy(config, params, validation_set)};
    result.history.push_back(rec);
    if (stopper.update(epoch, rec.val_acc)) result.best = params;
    if (on_epoch) on_epoch(rec);
    if (stopper.should_stop(epoch)) break;
  }
  result.best_epoch = stopper.best_epoch();
  result.best_val_acc = stopper.best();
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,lr,train_loss,val_acc\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + "," + format_double(r.lr) + "," + format_double(r.train_loss) + "," +
           format_double(r.val_acc) + "\n";
  return out;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << history_csv(history);
}

}  // namespace capmil
