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

#include <functional>
#include <string>
#include <vector>

#include "capmil/datagen.hpp"
#include "capmil/models.hpp"

namespace capmil {

// Piece-wise constant learning rate. Segment i applies while
// epoch < until_epoch; the last segment extends to infinity.
struct LrSegment {
  int until_epoch = 0;
  double lr = 0;
};

struct LrSchedule {
  std::vector<LrSegment> segments;

  // "5:1e-4,20:5e-5,inf:2e-5"
  static LrSchedule parse(const std::string& text);
  std::string to_string() const;
  void validate() const;
};

double lr_schedule(int epoch, const LrSchedule& schedule);

struct TrainConfig {
  int batch_size = 64;
  LrSchedule schedule = LrSchedule::parse("2:1e-2,10:2e-3,inf:5e-4");
  int patience = 8;
  int max_epochs = 30;
  std::uint64_t seed = 0;
  double rho = 0.9;
  double eps = 1e-7;

  void validate() const;
};

void write_train_config(KeyValueConfig& kv, const TrainConfig& c);
TrainConfig read_train_config(const KeyValueConfig& kv, const TrainConfig& defaults = {});

struct OptimizerState {
  ParamMap accumulators;  // same shapes as the parameters, always >= 0
  double rho = 0.9;
  double eps = 1e-7;
  double lr = 1e-3;
};

// s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps)
void rmsprop_step(ParamMap& params, const ParamMap& grads, OptimizerState& state);

// Padded mini-batch; padded bag rows are zero and masked out.
struct BagBatch {
  Matrix queries;                // B x C
  std::vector<Matrix> targets;   // B entries of Nmax x C
  std::vector<Mask> masks;       // B entries of length Nmax
  std::vector<int> labels;       // B
  std::vector<std::size_t> source;  // index of each row in the dataset

  std::size_t size() const { return labels.size(); }
  Eigen::Index max_bag() const { return targets.empty() ? 0 : targets.front().rows(); }
};

BagBatch make_batch(const std::vector<Exemplar>& dataset, const std::vector<std::size_t>& indices);

// Shuffles the dataset order with rng and cuts it into padded batches.
std::vector<BagBatch> make_batches(const std::vector<Exemplar>& dataset, int batch_size, Rng& rng);

struct BatchLoss {
  double loss = 0;  // mean over the batch
  ParamMap grads;   // gradient of the mean loss
};

BatchLoss batch_loss_and_grad(const ModelConfig& config, const ModelParams& params, const BagBatch& batch);

double accuracy(const ModelConfig& config, const ModelParams& params, const std::vector<Exemplar>& data,
                double threshold = 0.5);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_acc = 0;
};

// Tracks the best validation accuracy; improvement means strictly greater.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when `val_acc` is a new best.
  bool update(int epoch, double val_acc);
  bool should_stop(int epoch) const { return best_epoch_ >= 0 && epoch - best_epoch_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  int patience_;
  int best_epoch_ = -1;
  double best_ = -1;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_acc = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch BCE training with RMSprop and early stopping on validation
// accuracy; returns the snapshot with the best validation accuracy.
TrainResult train(const ModelConfig& config, ModelParams params, const std::vector<Exemplar>& train_set,
                  const std::vector<Exemplar>& validation_set, const TrainConfig& train_config,
                  const EpochCallback& on_epoch = {});

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace capmil
