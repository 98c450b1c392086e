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

#include "capmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capmil {

namespace {

void check_inputs(const char* name, const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw DimensionError(std::string(name) + ": scores and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw ContractError(std::string(name) + ": labels must be 0 or 1");
}

// Indices by descending score; equal scores keep input order.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs("roc_auc", scores, labels);
  const std::size_t n = scores.size();
  const double pos = std::count(labels.begin(), labels.end(), 1);
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw UndefinedMetricError("roc_auc: needs both positive and negative labels");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sum of positives with mid-ranks for ties (Mann-Whitney U).
  double rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += mid_rank;
    i = j;
  }
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs("average_precision", scores, labels);
  const auto order = descending_order(scores);
  double hits = 0, total = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] == 1) {
      hits += 1;
      total += hits / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw UndefinedMetricError("average_precision: no positive labels");
  return total / hits;
}

double average_precision_tied(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs("average_precision_tied", scores, labels);
  const auto order = descending_order(scores);
  const std::size_t n = order.size();
  double hits = 0, total = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    double group_pos = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_pos += labels[order[j]];
      ++j;
    }
    hits += group_pos;
    total += group_pos * hits / static_cast<double>(j);
    i = j;
  }
  if (hits == 0) throw UndefinedMetricError("average_precision_tied: no positive labels");
  return total / hits;
}

ClassificationReport classification_report(const std::vector<double>& probs, const std::vector<int>& labels,
                                           double threshold) {
  check_inputs("classification_report", probs, labels);
  if (probs.empty()) throw UndefinedMetricError("classification_report: no samples");
  double tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= threshold;
    if (pred && labels[i] == 1) tp += 1;
    else if (pred) fp += 1;
    else if (labels[i] == 1) fn += 1;
    else tn += 1;
  }
  auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
  auto f1 = [](double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; };
  const double p1 = ratio(tp, tp + fp), r1 = ratio(tp, tp + fn);
  const double p0 = ratio(tn, tn + fn), r0 = ratio(tn, tn + fp);

  ClassificationReport rep;
  rep.accuracy = (tp + tn) / static_cast<double>(probs.size());
  rep.macro_precision = 0.5 * (p0 + p1);
  rep.macro_recall = 0.5 * (r0 + r1);
  rep.macro_f1 = 0.5 * (f1(p0, r0) + f1(p1, r1));
  if (tp + fn > 0 && tn + fp > 0) rep.auroc = roc_auc(probs, labels);
  return rep;
}

EntropyReport attention_entropy(const AttentionScores& scores) {
  ad::detail::require_mask("attention_entropy", scores.mask, scores.per_head.cols());
  EntropyReport rep;
  for (Eigen::Index h = 0; h < scores.per_head.rows(); ++h) {
    double hsum = 0;
    for (Eigen::Index n = 0; n < scores.per_head.cols(); ++n) {
      const double a = scores.per_head(h, n);
      if (scores.mask[n] && a > 0) hsum -= a * std::log(a);
    }
    rep.per_head.push_back(hsum);
  }
  if (!rep.per_head.empty())
    rep.mean = std::accumulate(rep.per_head.begin(), rep.per_head.end(), 0.0) / rep.per_head.size();
  return rep;
}

}  // namespace capmil
