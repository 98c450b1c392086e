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

#include "capmil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "capmil/params.hpp"

namespace capmil {

std::optional<InstanceMetrics> instance_metrics(const std::vector<double>& scores, const std::vector<bool>& keys) {
  if (scores.size() != keys.size())
    throw DimensionError("instance_metrics: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(keys.size()) + " keys");
  const auto n_keys = static_cast<std::size_t>(std::count(keys.begin(), keys.end(), true));
  if (n_keys == 0 || n_keys == keys.size()) return std::nullopt;
  std::vector<int> labels(keys.begin(), keys.end());
  return InstanceMetrics{roc_auc(scores, labels), average_precision(scores, labels),
                         average_precision_tied(scores, labels)};
}

ExplanationReport explanation_report(const std::vector<ScoredBag>& bags) {
  ExplanationReport r;
  for (const auto& b : bags) {
    if (b.label != 1 || !b.keys) continue;
    auto m = instance_metrics(b.scores, *b.keys);
    if (!m) continue;
    r.avg_i_auroc += m->i_auroc;
    r.avg_i_ap += m->i_ap;
    r.avg_i_ap_tied += m->i_ap_tied;
    ++r.n_scored;
  }
  if (r.n_scored == 0) throw UndefinedMetricError("explanation_report: no positive exemplar with mixed keys");
  const double inv = 1.0 / static_cast<double>(r.n_scored);
  r.avg_i_auroc *= inv;
  r.avg_i_ap *= inv;
  r.avg_i_ap_tied *= inv;
  return r;
}

namespace {

std::vector<double> row_to_vector(const Matrix& row) { return {row.data(), row.data() + row.size()}; }

ScoredBag scored_bag(const Exemplar& e, const Matrix& scores_per_head) {
  return {e.label, e.key_mask, row_to_vector(scores_per_head.colwise().mean())};
}

}  // namespace

ExplanationReport explanation_report(const ModelConfig& config, const ModelParams& params,
                                     const std::vector<Exemplar>& test) {
  if (!config.exports_scores())
    throw ContractError("explanation_report: variant " + to_string(config.variant) + " exports no attention");
  std::vector<ScoredBag> bags;
  for (const auto& e : test) {
    if (e.label != 1) continue;
    bags.push_back(scored_bag(e, *predict(config, params, e).scores));
  }
  return explanation_report(bags);
}

// ---------------------------------------------------------------------------

std::string MetricsReport::csv_header() {
  return "auroc,accuracy,macro_precision,macro_recall,macro_f1,avg_i_auroc,avg_i_ap,avg_i_ap_tied,"
         "n_scored_exemplars,mean_attention_entropy";
}

std::string MetricsReport::csv_row() const {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  std::string s = opt(auroc) + "," + format_double(accuracy) + "," + format_double(macro_precision) + "," +
                  format_double(macro_recall) + "," + format_double(macro_f1) + ",";
  if (explanation)
    s += format_double(explanation->avg_i_auroc) + "," + format_double(explanation->avg_i_ap) + "," +
         format_double(explanation->avg_i_ap_tied) + "," + std::to_string(explanation->n_scored) + ",";
  else
    s += ",,,,";
  return s + opt(mean_attention_entropy);
}

EvalOutput evaluate(const ModelConfig& config, const ModelParams& params, const std::vector<Exemplar>& test) {
  if (test.empty()) throw ConfigError("evaluate: empty test split");
  EvalOutput out;
  std::vector<double> probs;
  std::vector<int> labels;
  for (const auto& e : test) {
    out.predictions.push_back(predict(config, params, e));
    probs.push_back(out.predictions.back().prob);
    labels.push_back(e.label);
  }
  const auto cls = classification_report(probs, labels);
  MetricsReport& r = out.report;
  r.auroc = cls.auroc;
  r.accuracy = cls.accuracy;
  r.macro_precision = cls.macro_precision;
  r.macro_recall = cls.macro_recall;
  r.macro_f1 = cls.macro_f1;

  if (config.exports_scores()) {
    std::vector<ScoredBag> bags;
    double entropy = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const Matrix& s = *out.predictions[i].scores;
      bags.push_back(scored_bag(test[i], s));
      entropy += attention_entropy({s, full_mask(static_cast<std::size_t>(s.cols()))}).mean;
    }
    r.mean_attention_entropy = entropy / static_cast<double>(test.size());
    // A split without usable key masks still gets classification metrics.
    try {
      r.explanation = explanation_report(bags);
    } catch (const UndefinedMetricError&) {
    }
  }
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsReport>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << MetricsReport::csv_header() << "\n";
  for (const auto& r : rows) out << r.csv_row() << "\n";
}

std::string attention_jsonl_line(const Exemplar& e, const Matrix& scores_per_head) {
  nlohmann::json heads = nlohmann::json::array();
  for (Eigen::Index h = 0; h < scores_per_head.rows(); ++h) heads.push_back(row_to_vector(scores_per_head.row(h)));
  nlohmann::json j;
  j["id"] = e.id;
  j["scores_per_head"] = std::move(heads);
  if (e.key_mask) {
    // Key indices, as in the dataset files.
    std::vector<int> keys;
    for (std::size_t n = 0; n < e.key_mask->size(); ++n)
      if ((*e.key_mask)[n]) keys.push_back(static_cast<int>(n));
    j["keys"] = keys;
  } else {
    j["keys"] = nullptr;
  }
  return j.dump();
}

void write_attention_jsonl(const std::string& path, const std::vector<Exemplar>& test,
                           const std::vector<Prediction>& predictions) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < test.size(); ++i)
    if (predictions.at(i).scores) out << attention_jsonl_line(test[i], *predictions[i].scores) << "\n";
}

// ---------------------------------------------------------------------------

double permutation_invariance_check(const Predictor& predictor, const Exemplar& e, int trials, std::uint64_t seed) {
  const double base = predictor(e);
  Rng rng(seed);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(e.bag_size()));
  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Exemplar shuffled = e;
    for (std::size_t i = 0; i < order.size(); ++i) {
      shuffled.target.row(static_cast<Eigen::Index>(i)) = e.target.row(order[i]);
      if (e.key_mask) (*shuffled.key_mask)[i] = (*e.key_mask)[static_cast<std::size_t>(order[i])];
    }
    worst = std::max(worst, std::abs(predictor(shuffled) - base));
  }
  return worst;
}

double permutation_invariance_check(const ModelConfig& config, const ModelParams& params, const Exemplar& e,
                                    int trials, std::uint64_t seed) {
  return permutation_invariance_check([&](const Exemplar& x) { return predict(config, params, x).prob; }, e,
                                      trials, seed);
}

}  // namespace capmil
