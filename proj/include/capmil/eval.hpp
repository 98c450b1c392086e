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

// Test-split evaluation: classification metrics, instance-level explanation
// metrics against planted key masks, the attention entropy diagnostic and a
// harness for checking order invariance.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "capmil/exemplar.hpp"
#include "capmil/metrics.hpp"
#include "capmil/models.hpp"

namespace capmil {

struct InstanceMetrics {
  double i_auroc = 0;
  double i_ap = 0;
  double i_ap_tied = 0;
};

// Scores one bag against its key mask. nullopt when the mask is all keys or
// has no keys, since neither ranking question is defined then.
std::optional<InstanceMetrics> instance_metrics(const std::vector<double>& scores, const std::vector<bool>& keys);

struct ScoredBag {
  int label = 0;
  std::optional<std::vector<bool>> keys;
  std::vector<double> scores;  // head-averaged, one per instance
};

struct ExplanationReport {
  double avg_i_auroc = 0;
  double avg_i_ap = 0;
  double avg_i_ap_tied = 0;
  std::size_t n_scored = 0;
};

// Averages over positive bags with a non-degenerate key mask; throws
// UndefinedMetricError when there are none.
ExplanationReport explanation_report(const std::vector<ScoredBag>& bags);
ExplanationReport explanation_report(const ModelConfig& config, const ModelParams& params,
                                     const std::vector<Exemplar>& test);

struct MetricsReport {
  std::optional<double> auroc;
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  std::optional<ExplanationReport> explanation;
  std::optional<double> mean_attention_entropy;

  static std::string csv_header();
  // Empty cells for metrics the variant cannot produce.
  std::string csv_row() const;
};

struct EvalOutput {
  MetricsReport report;
  std::vector<Prediction> predictions;  // aligned with the test split
};

EvalOutput evaluate(const ModelConfig& config, const ModelParams& params, const std::vector<Exemplar>& test);

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& rows);

// One JSON object per line: {"id", "scores_per_head", "keys"}. keys holds
// the key indices, or null when the exemplar carries no mask.
std::string attention_jsonl_line(const Exemplar& e, const Matrix& scores_per_head);
void write_attention_jsonl(const std::string& path, const std::vector<Exemplar>& test,
                           const std::vector<Prediction>& predictions);

using Predictor = std::function<double(const Exemplar&)>;

// Max |prob(shuffled) - prob(original)| over `trials` random reorderings of
// the bag (key mask permuted alongside).
double permutation_invariance_check(const Predictor& predictor, const Exemplar& e, int trials, std::uint64_t seed);
double permutation_invariance_check(const ModelConfig& config, const ModelParams& params, const Exemplar& e,
                                    int trials, std::uint64_t seed);

}  // namespace capmil
