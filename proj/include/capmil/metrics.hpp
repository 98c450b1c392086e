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

#include <optional>
#include <vector>

#include "capmil/attention.hpp"

namespace capmil {

// Probability that a random positive outranks a random negative, ties
// counted 1/2. Throws UndefinedMetricError unless both classes are present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean over positives of the precision at each positive's rank, ranking by
// descending score with ties broken by input order.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// Same, but tied scores share one threshold: every positive in a tie group
// gets the precision measured after the whole group. Differs from
// average_precision only when a tie group mixes keys and non-keys.
double average_precision_tied(const std::vector<double>& scores, const std::vector<int>& labels);

struct ClassificationReport {
  std::optional<double> auroc;  // empty when only one class is present
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
};

// Predicted positive when prob >= threshold. Precision/recall/F1 of a class
// with an empty denominator count as 0.
ClassificationReport classification_report(const std::vector<double>& probs, const std::vector<int>& labels,
                                           double threshold = 0.5);

struct EntropyReport {
  std::vector<double> per_head;  // nats
  double mean = 0;               // over heads
};

// H = -sum_n a_n ln a_n over valid positions, 0 ln 0 := 0.
EntropyReport attention_entropy(const AttentionScores& scores);

}  // namespace capmil
