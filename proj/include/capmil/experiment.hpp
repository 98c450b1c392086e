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

// Experiment runner behind the command line: dataset generation, repeated
// training rounds, evaluation, size sweeps and the component ablation ladder.
//
// One flat key = value file drives every command. Generator, model and
// training keys share a namespace; `channels` and `seed` are common to all
// of them. Round r uses seed + r for data, initialization and shuffling.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "capmil/datagen.hpp"
#include "capmil/eval.hpp"
#include "capmil/models.hpp"
#include "capmil/train.hpp"

namespace capmil {

enum class SweepAxis { train_size, bag_size };

struct ExperimentConfig {
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
  std::vector<Variant> variants;  // defaults to {model.variant}
  int rounds = 1;
  std::uint64_t seed = 0;
  std::optional<std::string> data_dir;  // precomputed JSONL splits instead of the generator
  SweepAxis sweep_axis = SweepAxis::train_size;
  std::vector<std::string> sweep_values;  // "500" or "10:2" (mean:variance)
  bool verbose = false;

  void validate() const;
};

// Throws ConfigError on unknown keys so that typos do not pass silently.
ExperimentConfig read_experiment_config(const KeyValueConfig& kv);
ExperimentConfig load_experiment_config(const std::string& path);
KeyValueConfig to_key_values(const ExperimentConfig& config);

using Logger = std::function<void(const std::string&)>;

struct RoundResult {
  Variant variant = Variant::baseline;
  int round = 0;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double best_val_acc = 0;
  MetricsReport metrics;
};

struct LadderRow {
  std::string attention;  // "vema" | "dba"
  int rung = 0;           // 0..4 for the ladder, 5 for the post-aggregation LN variant
  std::string name;
  ModelConfig model;
  MetricsReport metrics;  // mean over rounds
};

// Runs one round: data for `seed` (generated or loaded), training, test
// evaluation. Writes checkpoint/history/metrics into `dir` when non-empty.
RoundResult run_round(const ExperimentConfig& config, const ModelConfig& model, int round, const std::string& dir,
                      const Logger& log = {});

DatasetSplit round_data(const ExperimentConfig& config, std::uint64_t seed);

void cmd_gen(const ExperimentConfig& config, const std::string& out_dir);
std::vector<RoundResult> cmd_train(const ExperimentConfig& config, const std::string& out_dir, const Logger& log = {});
MetricsReport cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& out_dir);
void cmd_sweep(const ExperimentConfig& config, const std::string& out_dir, const Logger& log = {});
std::vector<LadderRow> cmd_ablate(const ExperimentConfig& config, const std::string& out_dir, const Logger& log = {});

// The ladder configurations for one attention function, rung 0 first.
std::vector<std::pair<std::string, ModelConfig>> ablation_ladder(const ModelConfig& base, AttentionKind attention);

// Metric columns shared by the CSV writers, in MetricsReport header order.
std::vector<std::optional<double>> metric_values(const MetricsReport& m);
std::vector<std::string> metric_names();

std::string summary_csv(const std::vector<RoundResult>& results);
// variant,metric,n,mean,stderr with the sample standard error.
std::string aggregate_csv(const std::vector<RoundResult>& results);
std::string ladder_csv(const std::vector<LadderRow>& rows);

}  // namespace capmil
