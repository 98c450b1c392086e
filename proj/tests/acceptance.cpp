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


// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 when
// any criterion fails. Timings are printed so the runtime budgets can be
// read off the log.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "capmil/experiment.hpp"
#include "support.hpp"

using namespace capmil;
using namespace capmil::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("capmil_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelParams perturbed(const ModelConfig& config, Rng& rng, double scale) {
  ModelParams p = init_params(config);
  for (auto& [name, m] : p.tensors) m += random_matrix(m.rows(), m.cols(), rng, scale);
  return p;
}

// ---------------------------------------------------------------------------

Outcome permutation_invariance() {
  Rng rng(101);
  std::uniform_int_distribution<int> size(1, 16);
  double worst = 0;
  for (Variant v : all_variants()) {
    ModelConfig config;
    config.variant = v;
    const ModelParams p = perturbed(config, rng, 0.05);
    for (int i = 0; i < 100; ++i) {
      const Exemplar e = random_exemplar(config.channels, size(rng), rng);
      worst = std::max(worst, permutation_invariance_check(config, p, e, 20, derive_seed(101, i)));
    }
  }
  return {worst < 1e-9, "max |dprob| " + fmt("%.3g", worst)};
}

Outcome gradient_correctness() {
  Rng rng(202);
  double worst = 0;
  std::string where;
  for (Variant v : {Variant::cap_vema, Variant::cap_dba, Variant::baseline, Variant::gabmil, Variant::pma,
                    Variant::msa, Variant::minet}) {
    ModelConfig config;
    config.variant = v;
    config.channels = 8;
    config.heads = 2;
    for (int n : {1, 3, 7}) {
      const ModelParams p = perturbed(config, rng, 0.2);
      const auto [name, err] = model_gradient_error(config, p, random_exemplar(8, n, rng));
      if (err > worst) {
        worst = err;
        where = to_string(v) + "/" + name + " N=" + std::to_string(n);
      }
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst) + " at " + where};
}

Outcome dba_monte_carlo() {
  Rng rng(303);
  std::normal_distribution<double> normal(0, 1);
  double worst = 0;
  for (int d : {1, 4, 16}) {
    const int draws = 1000000;
    double sum = 0, sq = 0;
    for (int i = 0; i < draws; ++i) {
      double dist = 0;
      for (int k = 0; k < d; ++k) dist += std::abs(normal(rng) - normal(rng));
      sum += dist;
      sq += dist * dist;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt((sq - draws * mean * mean) / (draws - 1));
    const DbaConstants k = dba_constants(d);
    worst = std::max({worst, std::abs(mean / k.c - 1), std::abs(sd / k.s - 1)});
  }
  return {worst < 0.01, "max relative deviation " + fmt("%.4f", worst)};
}

Outcome metric_oracles() {
  const double grid[3] = {0.1, 0.5, 0.9};
  double worst = 0;
  long checked = 0;
  for (int n = 1; n <= 8; ++n) {
    std::vector<double> s(n);
    std::vector<int> y(n);
    std::vector<bool> keys(n);
    int codes = 1;
    for (int i = 0; i < n; ++i) codes *= 3;
    for (int code = 0; code < codes; ++code) {
      for (int i = 0, c = code; i < n; ++i, c /= 3) s[i] = grid[c % 3];
      for (int bits = 0; bits < (1 << n); ++bits) {
        int pos = 0;
        for (int i = 0; i < n; ++i) pos += y[i] = (bits >> i) & 1, keys[i] = y[i];
        if (pos == 0) continue;
        const double ap = brute_ap(s, y), ap_tied = brute_ap_tied(s, y);
        worst = std::max({worst, std::abs(average_precision(s, y) - ap),
                          std::abs(average_precision_tied(s, y) - ap_tied)});
        if (pos < n) {
          const double auc = brute_auroc(s, y);
          const auto im = instance_metrics(s, keys);
          worst = std::max({worst, std::abs(roc_auc(s, y) - auc), std::abs(im->i_auroc - auc),
                            std::abs(im->i_ap - ap), std::abs(im->i_ap_tied - ap_tied)});
        }
        ++checked;
      }
    }
  }
  return {worst <= 1e-12, std::to_string(checked) + " configurations, max deviation " + fmt("%.3g", worst)};
}

Outcome label_round_trip() {
  GenConfig g;
  g.n_train = 4000;
  g.n_validation = 3000;
  g.n_test = 3000;
  g.seed = 404;
  const DatasetSplit d = make_splits(g);
  int checked = 0, agree = 0;
  // Only the test split keeps key masks on disk; the in-memory generator
  // draws every split the same way, so regenerate with masks kept.
  Rng rng(404);
  Prototypes protos{make_class_prototypes(g.num_classes, g.channels, rng), Matrix()};
  std::vector<int> pool(d.train_classes);
  for (int i = 0; i < 7000; ++i) {
    const Exemplar e = sample_exemplar(g, protos, pool, rng);
    ++checked;
    agree += bag_label_from_pairs(exemplar_to_pairs(e)) == e.label;
  }
  for (const auto& e : d.test) {
    ++checked;
    agree += bag_label_from_pairs(exemplar_to_pairs(e)) == e.label;
  }
  return {checked >= 10000 && agree == checked, std::to_string(agree) + "/" + std::to_string(checked) + " agree"};
}

Outcome padding_neutrality() {
  Rng rng(505);
  std::uniform_int_distribution<int> size(1, 9);
  double worst = 0;
  const auto& variants = all_variants();
  for (int b = 0; b < 100; ++b) {
    ModelConfig config;
    config.variant = variants[b % variants.size()];
    config.channels = 16;
    const ModelParams p = perturbed(config, rng, 0.05);
    std::vector<Exemplar> set;
    for (int i = 0; i < 6; ++i) set.push_back(random_exemplar(16, size(rng), rng));
    const BagBatch batch = make_batch(set, {0, 1, 2, 3, 4, 5});
    const BatchLoss bl = batch_loss_and_grad(config, p, batch);
    ParamMap mean;
    for (std::size_t i = 0; i < set.size(); ++i) {
      const Exemplar& e = set[i];
      const LossGrad lg = loss_and_grad(config, p, e.query, e.target, full_mask(e.bag_size()), e.label);
      const Prediction padded = predict(config, p, batch.queries.row(i), batch.targets[i], batch.masks[i]);
      worst = std::max(worst, std::abs(padded.prob - lg.prob));
      for (const auto& [name, g] : lg.grads) {
        if (!mean.count(name)) mean[name] = Matrix::Zero(g.rows(), g.cols());
        mean[name] += g / static_cast<double>(set.size());
      }
    }
    for (const auto& [name, g] : mean) worst = std::max(worst, (bl.grads.at(name) - g).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-9, "max deviation " + fmt("%.3g", worst)};
}

Outcome separable_convergence() {
  GenConfig g;
  g.gamma = 0;
  g.sigma = 0.05;
  g.channels = 32;
  g.n_train = 2000;
  g.seed = 606;
  const DatasetSplit d = make_splits(g);
  ModelConfig m;
  m.variant = Variant::baseline;
  m.channels = 32;
  m.seed = 606;
  TrainConfig t;
  t.max_epochs = 30;
  t.patience = 30;
  t.seed = 606;
  int first = -1;
  double best = 0;
  const TrainResult r = train(m, init_params(m), d.train, d.validation, t, [&](const EpochRecord& rec) {
    best = std::max(best, rec.val_acc);
    if (first < 0 && rec.val_acc >= 0.95) first = rec.epoch;
  });
  (void)r;
  return {first >= 0, "best validation accuracy " + fmt("%.3f", best) +
                          (first >= 0 ? ", reached 0.95 at epoch " + std::to_string(first) : std::string())};
}

struct HardTask {
  std::vector<RoundResult> results;
  const RoundResult& get(Variant v, int round) const {
    for (const auto& r : results)
      if (r.variant == v && r.round == round) return r;
    throw ContractError("missing result");
  }
};

HardTask run_hard_task() {
  ExperimentConfig c;
  c.gen.gamma = 0.7;
  c.gen.sigma = 0.3;
  c.gen.n_train = 8000;
  c.gen.bag_mean = 10;
  c.variants = {Variant::baseline, Variant::gabmil, Variant::cap_vema, Variant::cap_dba};
  c.rounds = 3;
  c.seed = 0;
  const auto dir = scratch("hard");
  HardTask h{cmd_train(c, dir.string())};
  std::printf("hard task summary:\n%s", slurp(dir / "summary.csv").c_str());
  fs::remove_all(dir);
  return h;
}

double iauroc(const RoundResult& r) { return r.metrics.explanation->avg_i_auroc; }

Outcome directional_ordering(const HardTask& h) {
  int held = 0;
  std::string detail;
  double avg[4] = {0, 0, 0, 0};
  for (int round = 0; round < 3; ++round) {
    const auto& base = h.get(Variant::baseline, round);
    const auto& gab = h.get(Variant::gabmil, round);
    const auto& vema = h.get(Variant::cap_vema, round);
    const auto& dba = h.get(Variant::cap_dba, round);
    bool ok = true;
    for (const RoundResult* cap : {&vema, &dba}) {
      ok = ok && iauroc(*cap) >= 0.9 && iauroc(*cap) - iauroc(gab) >= 0.1;
      ok = ok && *cap->metrics.auroc > *base.metrics.auroc;
    }
    held += ok;
    avg[0] += iauroc(vema) / 3, avg[1] += iauroc(dba) / 3, avg[2] += iauroc(gab) / 3, avg[3] += iauroc(base) / 3;
    detail += " r" + std::to_string(round) + (ok ? "+" : "-") + "[auroc base " + fmt("%.3f", *base.metrics.auroc) +
              " vema " + fmt("%.3f", *vema.metrics.auroc) + " dba " + fmt("%.3f", *dba.metrics.auroc) + "]";
  }
  return {held >= 2, "held in " + std::to_string(held) + "/3 rounds; mean i-AUROC vema " + fmt("%.3f", avg[0]) +
                         " dba " + fmt("%.3f", avg[1]) + " gabmil " + fmt("%.3f", avg[2]) + " baseline " +
                         fmt("%.3f", avg[3]) + ";" + detail};
}

Outcome entropy_diagnostic(const HardTask& h) {
  double exact = 0;
  for (int n : {1, 2, 5, 17}) {
    AttentionScores uniform{Matrix::Constant(1, n, 1.0 / n), full_mask(n)};
    exact = std::max(exact, std::abs(attention_entropy(uniform).mean - std::log(double(n))));
    Matrix hot = Matrix::Zero(1, n);
    hot(0, n - 1) = 1;
    exact = std::max(exact, std::abs(attention_entropy(AttentionScores{hot, full_mask(n)}).mean));
  }
  int held = 0;
  std::string detail;
  for (int round = 0; round < 3; ++round) {
    const double g = *h.get(Variant::gabmil, round).metrics.mean_attention_entropy;
    const double v = *h.get(Variant::cap_vema, round).metrics.mean_attention_entropy;
    const double d = *h.get(Variant::cap_dba, round).metrics.mean_attention_entropy;
    held += v < g && d < g;
    detail += " r" + std::to_string(round) + "[vema " + fmt("%.3f", v) + " dba " + fmt("%.3f", d) + " gabmil " +
              fmt("%.3f", g) + "]";
  }
  return {exact <= 1e-12 && held >= 2, "closed forms within " + fmt("%.2g", exact) + "; CAP below GABMIL in " +
                                           std::to_string(held) + "/3 rounds;" + detail};
}

const char* kSmallExperiment = R"(channels = 8
heads = 2
num_classes = 20
n_train = 64
n_validation = 24
n_test = 32
batch_size = 16
max_epochs = 2
patience = 1
lr_schedule = inf:5e-3
variants = baseline,gabmil,cap_vema,cap_dba,msa
rounds = 2
seed = 7
)";

ExperimentConfig small_experiment() { return read_experiment_config(KeyValueConfig::parse(kSmallExperiment)); }

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

Outcome ladder_integrity() {
  const auto dir = scratch("ladder");
  cmd_ablate(small_experiment(), dir.string());
  const auto csv = parse_csv(slurp(dir / "ladder.csv"));
  fs::remove_all(dir);
  const auto& h = csv.front();
  auto col = [&](const std::string& name) {
    for (std::size_t i = 0; i < h.size(); ++i)
      if (h[i] == name) return i;
    throw ContractError("ladder.csv lacks " + name);
  };
  const std::size_t rung = col("rung"), att = col("attention"), variant = col("variant");
  const std::size_t flags[3] = {col("use_multihead_projection"), col("use_sce"), col("layernorm_placement")};
  const auto names = metric_names();
  bool ok = csv.size() == 1 + 2 * 6;
  std::string why = ok ? "" : " wrong row count";
  double worst = 0;
  for (std::size_t i = 1; ok && i < csv.size(); ++i) {
    const int r = std::stoi(csv[i][rung]);
    const std::size_t expect_rung = (i - 1) % 6;
    if (r != static_cast<int>(expect_rung)) ok = false, why = " rung order";
    if (r == 0) continue;
    const auto& prev = csv[i - 1];
    if (prev[att] != csv[i][att]) ok = false, why = " attention mixed within a ladder";
    int diffs = prev[variant] != csv[i][variant];
    for (auto f : flags) diffs += prev[f] != csv[i][f];
    if (r <= 4 && diffs != 1) ok = false, why = " rung " + std::to_string(r) + " differs in " + std::to_string(diffs);
    // Rung 5 swaps the LayerNorm placement of rung 4 and nothing else.
    if (r == 5 && (diffs != 1 || prev[flags[2]] == csv[i][flags[2]])) ok = false, why = " rung 5 placement";
    for (const auto& m : names) {
      const auto& cur = csv[i][col(m)];
      const auto& base = prev[col(m)];
      const auto& delta = csv[i][col("delta_" + m)];
      if (cur.empty() || base.empty()) {
        if (!delta.empty()) ok = false, why = " delta without operands";
        continue;
      }
      worst = std::max(worst, std::abs(std::stod(delta) - (std::stod(cur) - std::stod(base))));
    }
  }
  ok = ok && worst <= 1e-12;
  return {ok, "12 rows, max delta recomputation error " + fmt("%.3g", worst) + why};
}

Outcome determinism() {
  const ExperimentConfig c = small_experiment();
  std::vector<std::string> files;
  std::string mismatch;
  std::string runs[2];
  for (int k = 0; k < 2; ++k) {
    const auto dir = scratch("det" + std::to_string(k));
    cmd_gen(c, (dir / "data").string());
    cmd_train(c, (dir / "train").string());
    cmd_eval((dir / "train" / "cap_vema" / "round_1" / "checkpoint.bin").string(), (dir / "data").string(),
             (dir / "eval").string());
  }
  const auto a = fs::temp_directory_path() / "capmil_acceptance_det0";
  const auto b = fs::temp_directory_path() / "capmil_acceptance_det1";
  int compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    ++compared;
    if (slurp(entry.path()) != slurp(b / rel)) mismatch += " " + rel.string();
  }
  fs::remove_all(a);
  fs::remove_all(b);
  return {mismatch.empty() && compared > 0,
          std::to_string(compared) + " files compared" + (mismatch.empty() ? "" : ", differing:" + mismatch)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& run) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& ex) {
      o = {false, std::string("threw: ") + ex.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("criterion %2d %-28s %s  (%.1fs) %s\n", id, name.c_str(), o.pass ? "PASS" : "FAIL", secs,
                o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "permutation-invariance", permutation_invariance);
  report(2, "gradient-correctness", gradient_correctness);
  report(3, "dba-constants", dba_monte_carlo);
  report(4, "metric-oracles", metric_oracles);
  report(5, "label-round-trip", label_round_trip);
  report(6, "padding-neutrality", padding_neutrality);
  report(7, "separable-convergence", separable_convergence);

  HardTask hard;
  std::string hard_error;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    hard = run_hard_task();
  } catch (const std::exception& ex) {
    hard_error = ex.what();
  }
  std::printf("hard task: 3 rounds x 4 variants trained in %.1fs\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  auto needs_hard = [&](Outcome (*f)(const HardTask&)) {
    return [&, f]() -> Outcome {
      if (!hard_error.empty()) return {false, "hard task failed: " + hard_error};
      return f(hard);
    };
  };

  report(8, "directional-ordering", needs_hard(directional_ordering));
  report(9, "ablation-ladder", ladder_integrity);
  report(10, "determinism", determinism);
  report(11, "entropy-diagnostic", needs_hard(entropy_diagnostic));

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
