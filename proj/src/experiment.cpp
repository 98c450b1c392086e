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

#include "capmil/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace capmil {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::string bool_cell(bool b) { return b ? "1" : "0"; }

}  // namespace

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  gen.validate();
  model.validate();
  train.validate();
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (variants.empty()) throw ConfigError("variants must not be empty");
  if (model.channels != gen.channels) throw ConfigError("model and generator channels differ");
}

ExperimentConfig read_experiment_config(const KeyValueConfig& kv) {
  ExperimentConfig c;
  c.gen = read_gen_config(kv);
  c.model = read_model_config(kv);
  c.train = read_train_config(kv);
  c.seed = kv.get_u64("seed", 0);
  c.rounds = kv.get_int("rounds", c.rounds);
  if (auto v = kv.get("variants")) {
    for (const auto& name : split(*v, ','))
      if (!trim(name).empty()) c.variants.push_back(parse_variant(trim(name)));
  } else {
    c.variants = {c.model.variant};
  }
  if (auto d = kv.get("data_dir"); d && !d->empty()) c.data_dir = *d;
  const std::string axis = kv.get_string("sweep_axis", "train_size");
  if (axis == "train_size") c.sweep_axis = SweepAxis::train_size;
  else if (axis == "bag_size") c.sweep_axis = SweepAxis::bag_size;
  else throw ConfigError("sweep_axis must be train_size or bag_size, got '" + axis + "'");
  if (auto v = kv.get("sweep_values"))
    for (const auto& s : split(*v, ','))
      if (!trim(s).empty()) c.sweep_values.push_back(trim(s));
  c.verbose = kv.get_bool("verbose", c.verbose);

  if (auto unused = kv.unused_keys(); !unused.empty()) throw ConfigError("unknown key '" + unused.front() + "'");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  return read_experiment_config(KeyValueConfig::load(path));
}

KeyValueConfig to_key_values(const ExperimentConfig& c) {
  KeyValueConfig kv;
  write_gen_config(kv, c.gen);
  write_model_config(kv, c.model);
  write_train_config(kv, c.train);
  kv.set("seed", std::to_string(c.seed));
  std::string variants;
  for (auto v : c.variants) variants += (variants.empty() ? "" : ",") + to_string(v);
  kv.set("variants", variants);
  kv.set("rounds", std::to_string(c.rounds));
  if (c.data_dir) kv.set("data_dir", *c.data_dir);
  kv.set("sweep_axis", c.sweep_axis == SweepAxis::train_size ? "train_size" : "bag_size");
  std::string values;
  for (const auto& s : c.sweep_values) values += (values.empty() ? "" : ",") + s;
  if (!values.empty()) kv.set("sweep_values", values);
  kv.set("verbose", c.verbose ? "true" : "false");
  return kv;
}

// ---------------------------------------------------------------------------

std::vector<std::string> metric_names() {
  return split(MetricsReport::csv_header(), ',');
}

std::vector<std::optional<double>> metric_values(const MetricsReport& m) {
  std::vector<std::optional<double>> v{m.auroc, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1};
  if (m.explanation) {
    v.insert(v.end(), {m.explanation->avg_i_auroc, m.explanation->avg_i_ap, m.explanation->avg_i_ap_tied,
                       static_cast<double>(m.explanation->n_scored)});
  } else {
    v.insert(v.end(), 4, std::nullopt);
  }
  v.push_back(m.mean_attention_entropy);
  return v;
}

namespace {

// Field-wise mean; optional fields survive only when every report has them.
MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  const double inv = 1.0 / static_cast<double>(rs.size());
  MetricsReport m;
  bool auroc = true, expl = true, ent = true;
  m.auroc = 0.0;
  m.explanation = ExplanationReport{};
  m.mean_attention_entropy = 0.0;
  for (const auto& r : rs) {
    m.accuracy += r.accuracy * inv;
    m.macro_precision += r.macro_precision * inv;
    m.macro_recall += r.macro_recall * inv;
    m.macro_f1 += r.macro_f1 * inv;
    if (r.auroc) *m.auroc += *r.auroc * inv;
    else auroc = false;
    if (r.explanation) {
      m.explanation->avg_i_auroc += r.explanation->avg_i_auroc * inv;
      m.explanation->avg_i_ap += r.explanation->avg_i_ap * inv;
      m.explanation->avg_i_ap_tied += r.explanation->avg_i_ap_tied * inv;
      m.explanation->n_scored += r.explanation->n_scored;
    } else {
      expl = false;
    }
    if (r.mean_attention_entropy) *m.mean_attention_entropy += *r.mean_attention_entropy * inv;
    else ent = false;
  }
  if (!auroc) m.auroc.reset();
  if (!expl) m.explanation.reset();
  else m.explanation->n_scored = static_cast<std::size_t>(std::llround(static_cast<double>(m.explanation->n_scored) * inv));
  if (!ent) m.mean_attention_entropy.reset();
  return m;
}

}  // namespace

std::string summary_csv(const std::vector<RoundResult>& results) {
  std::string s = "variant,round,seed,best_epoch,best_val_acc," + MetricsReport::csv_header() + "\n";
  for (const auto& r : results)
    s += to_string(r.variant) + "," + std::to_string(r.round) + "," + std::to_string(r.seed) + "," +
         std::to_string(r.best_epoch) + "," + format_double(r.best_val_acc) + "," + r.metrics.csv_row() + "\n";
  return s;
}

std::string aggregate_csv(const std::vector<RoundResult>& results) {
  std::string s = "variant,metric,n,mean,stderr\n";
  std::vector<Variant> order;
  for (const auto& r : results)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  const auto names = metric_names();
  for (auto v : order) {
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::vector<double> xs;
      for (const auto& r : results)
        if (r.variant == v)
          if (auto x = metric_values(r.metrics)[k]) xs.push_back(*x);
      if (xs.empty()) continue;
      const double n = static_cast<double>(xs.size());
      double mean = 0;
      for (double x : xs) mean += x;
      mean /= n;
      double ss = 0;
      for (double x : xs) ss += (x - mean) * (x - mean);
      const double se = xs.size() > 1 ? std::sqrt(ss / (n - 1)) / std::sqrt(n) : 0.0;
      s += to_string(v) + "," + names[k] + "," + std::to_string(xs.size()) + "," + format_double(mean) + "," +
           format_double(se) + "\n";
    }
  }
  return s;
}

std::string ladder_csv(const std::vector<LadderRow>& rows) {
  std::string s = "attention,rung,name,variant,use_multihead_projection,use_sce,layernorm_placement," +
                  MetricsReport::csv_header();
  for (const auto& n : metric_names()) s += ",delta_" + n;
  s += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const LadderRow& r = rows[i];
    s += r.attention + "," + std::to_string(r.rung) + "," + r.name + "," + to_string(r.model.variant) + "," +
         bool_cell(r.model.use_multihead_projection) + "," + bool_cell(r.model.use_sce) + "," +
         to_string(r.model.layernorm) + "," + r.metrics.csv_row();
    // Rung 0 has no predecessor; the LN variant compares against rung 4.
    const LadderRow* prev = nullptr;
    if (r.rung >= 1 && r.rung <= 4) prev = &rows[i - 1];
    if (r.rung == 5)
      for (const auto& q : rows)
        if (q.attention == r.attention && q.rung == 4) prev = &q;
    const auto cur = metric_values(r.metrics);
    const auto base = prev ? metric_values(prev->metrics) : std::vector<std::optional<double>>(cur.size());
    for (std::size_t k = 0; k < cur.size(); ++k)
      s += "," + (cur[k] && base[k] ? format_double(*cur[k] - *base[k]) : std::string());
    s += "\n";
  }
  return s;
}

// ---------------------------------------------------------------------------

DatasetSplit round_data(const ExperimentConfig& config, std::uint64_t seed) {
  if (config.data_dir) {
    const fs::path dir(*config.data_dir);
    DatasetSplit d;
    d.train = load_jsonl((dir / "train.jsonl").string());
    d.validation = load_jsonl((dir / "validation.jsonl").string());
    d.test = load_jsonl((dir / "test.jsonl").string());
    for (const auto* split : {&d.train, &d.validation, &d.test})
      for (const auto& e : *split)
        if (e.channels() != config.model.channels)
          throw DimensionError("exemplar " + e.id + " has " + std::to_string(e.channels()) +
                               " channels, config says " + std::to_string(config.model.channels));
    return d;
  }
  GenConfig g = config.gen;
  g.seed = seed;
  return make_splits(g);
}

namespace {

RoundResult train_and_eval(const ExperimentConfig& config, ModelConfig model, const DatasetSplit& data, int round,
                           std::uint64_t seed, const std::string& dir, const Logger& log) {
  model.seed = seed;
  TrainConfig tc = config.train;
  tc.seed = seed;
  const std::string tag = to_string(model.variant) + " round " + std::to_string(round);
  auto fit = train(model, init_params(model), data.train, data.validation, tc, [&](const EpochRecord& r) {
    say(log, tag + " epoch " + std::to_string(r.epoch) + " lr " + format_double(r.lr) + " loss " +
                 format_double(r.train_loss) + " val_acc " + format_double(r.val_acc));
  });
  auto ev = evaluate(model, fit.best, data.test);
  if (!dir.empty()) {
    make_dir(dir);
    save_checkpoint((fs::path(dir) / "checkpoint.bin").string(), model, fit.best);
    write_history_csv((fs::path(dir) / "history.csv").string(), fit.history);
    write_metrics_csv((fs::path(dir) / "metrics.csv").string(), {ev.report});
  }
  say(log, tag + " test " + ev.report.csv_row());
  return {model.variant, round, seed, fit.best_epoch, fit.best_val_acc, ev.report};
}

}  // namespace

RoundResult run_round(const ExperimentConfig& config, const ModelConfig& model, int round, const std::string& dir,
                      const Logger& log) {
  const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(round);
  return train_and_eval(config, model, round_data(config, seed), round, seed, dir, log);
}

// ---------------------------------------------------------------------------

void cmd_gen(const ExperimentConfig& config, const std::string& out_dir) {
  make_dir(out_dir);
  GenConfig g = config.gen;
  g.seed = config.seed;
  const DatasetSplit d = make_splits(g);
  const fs::path dir(out_dir);
  write_jsonl((dir / "train.jsonl").string(), d.train);
  write_jsonl((dir / "validation.jsonl").string(), d.validation);
  write_jsonl((dir / "test.jsonl").string(), d.test);

  KeyValueConfig manifest;
  write_gen_config(manifest, g);
  const std::pair<const char*, const std::vector<Exemplar>*> splits[] = {
      {"train", &d.train}, {"validation", &d.validation}, {"test", &d.test}};
  for (const auto& [name, data] : splits) {
    const BagStats s = compute_bag_stats(*data);
    const std::string p = std::string("stats.") + name + ".";
    manifest.set(p + "count", std::to_string(s.count));
    manifest.set(p + "bag_mean", format_double(s.bag_mean));
    manifest.set(p + "bag_median", format_double(s.bag_median));
    manifest.set(p + "bag_min", std::to_string(s.bag_min));
    manifest.set(p + "bag_max", std::to_string(s.bag_max));
    manifest.set(p + "positive_rate", format_double(s.positive_rate));
    manifest.set(p + "key_mean", format_double(s.key_mean));
    manifest.set(p + "key_median", format_double(s.key_median));
    manifest.set(p + "key_max", std::to_string(s.key_max));
  }
  manifest.save((dir / "manifest.txt").string());
}

std::vector<RoundResult> cmd_train(const ExperimentConfig& config, const std::string& out_dir, const Logger& log) {
  make_dir(out_dir);
  to_key_values(config).save((fs::path(out_dir) / "config.txt").string());
  std::vector<RoundResult> results;
  for (int r = 0; r < config.rounds; ++r) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(r);
    const DatasetSplit data = round_data(config, seed);
    for (auto v : config.variants) {
      ModelConfig m = config.model;
      m.variant = v;
      const fs::path dir = fs::path(out_dir) / to_string(v) / ("round_" + std::to_string(r));
      results.push_back(train_and_eval(config, m, data, r, seed, dir.string(), log));
    }
  }
  write_text(fs::path(out_dir) / "summary.csv", summary_csv(results));
  write_text(fs::path(out_dir) / "aggregate.csv", aggregate_csv(results));
  return results;
}

MetricsReport cmd_eval(const std::string& checkpoint, const std::string& data_path, const std::string& out_dir) {
  const auto [model, params] = load_checkpoint(checkpoint);
  fs::path path(data_path);
  if (fs::is_directory(path)) path /= "test.jsonl";
  const auto test = load_jsonl(path.string());
  for (const auto& e : test)
    if (e.channels() != model.channels)
      throw DimensionError("exemplar " + e.id + " has " + std::to_string(e.channels()) + " channels, model has " +
                           std::to_string(model.channels));
  const auto ev = evaluate(model, params, test);
  make_dir(out_dir);
  write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), {ev.report});
  write_attention_jsonl((fs::path(out_dir) / "attention.jsonl").string(), test, ev.predictions);
  return ev.report;
}

void cmd_sweep(const ExperimentConfig& config, const std::string& out_dir, const Logger& log) {
  if (config.sweep_values.empty()) throw ConfigError("sweep_values must list at least one point");
  if (config.data_dir) throw ConfigError("sweep regenerates data per point; data_dir is not allowed");
  make_dir(out_dir);
  to_key_values(config).save((fs::path(out_dir) / "config.txt").string());
  const bool by_size = config.sweep_axis == SweepAxis::train_size;
  std::string csv = "axis,value,variant,round,seed,best_epoch,best_val_acc," + MetricsReport::csv_header() + "\n";
  for (const auto& value : config.sweep_values) {
    ExperimentConfig point = config;
    try {
      if (by_size) {
        point.gen.n_train = std::stoi(value);
      } else {
        const auto parts = split(value, ':');
        if (parts.size() != 2) throw ConfigError("bag_size points look like mean:variance");
        point.gen.bag_mean = std::stod(parts[0]);
        point.gen.bag_var = std::stod(parts[1]);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad sweep value '" + value + "'");
    }
    point.gen.validate();
    for (int r = 0; r < point.rounds; ++r) {
      const std::uint64_t seed = point.seed + static_cast<std::uint64_t>(r);
      const DatasetSplit data = round_data(point, seed);
      for (auto v : point.variants) {
        ModelConfig m = point.model;
        m.variant = v;
        auto res = train_and_eval(point, m, data, r, seed, {}, log);
        csv += std::string(by_size ? "train_size" : "bag_size") + "," + value + "," + to_string(v) + "," +
               std::to_string(r) + "," + std::to_string(seed) + "," + std::to_string(res.best_epoch) + "," +
               format_double(res.best_val_acc) + "," + res.metrics.csv_row() + "\n";
      }
    }
  }
  write_text(fs::path(out_dir) / "curve.csv", csv);
}

std::vector<std::pair<std::string, ModelConfig>> ablation_ladder(const ModelConfig& base, AttentionKind attention) {
  std::vector<std::pair<std::string, ModelConfig>> ladder;
  ModelConfig m = base;
  m.variant = Variant::baseline;
  m.use_multihead_projection = false;
  m.use_sce = false;
  m.layernorm = LayerNormPlacement::none;
  ladder.emplace_back("baseline", m);
  m.variant = attention == AttentionKind::vema ? Variant::cap_vema : Variant::cap_dba;
  ladder.emplace_back("new_attention", m);
  m.use_multihead_projection = true;
  ladder.emplace_back("multihead_projection", m);
  m.use_sce = true;
  ladder.emplace_back("sce", m);
  m.layernorm = LayerNormPlacement::pre_aggregation;
  ladder.emplace_back("pre_aggregation_ln", m);
  return ladder;
}

std::vector<LadderRow> cmd_ablate(const ExperimentConfig& config, const std::string& out_dir, const Logger& log) {
  make_dir(out_dir);
  to_key_values(config).save((fs::path(out_dir) / "config.txt").string());
  std::vector<DatasetSplit> data;
  for (int r = 0; r < config.rounds; ++r) data.push_back(round_data(config, config.seed + static_cast<std::uint64_t>(r)));

  auto run_all = [&](const ModelConfig& m) {
    std::vector<MetricsReport> reports;
    for (int r = 0; r < config.rounds; ++r)
      reports.push_back(
          train_and_eval(config, m, data[static_cast<std::size_t>(r)], r, config.seed + static_cast<std::uint64_t>(r), {}, log)
              .metrics);
    return mean_report(reports);
  };

  std::vector<LadderRow> rows;
  std::optional<MetricsReport> baseline;  // identical rung 0 for both ladders; train it once
  for (auto kind : {AttentionKind::vema, AttentionKind::dba}) {
    const std::string att = kind == AttentionKind::vema ? "vema" : "dba";
    const auto ladder = ablation_ladder(config.model, kind);
    for (std::size_t i = 0; i < ladder.size(); ++i) {
      const auto& [name, m] = ladder[i];
      MetricsReport rep;
      if (i == 0) {
        if (!baseline) baseline = run_all(m);
        rep = *baseline;
      } else {
        rep = run_all(m);
      }
      rows.push_back({att, static_cast<int>(i), name, m, rep});
    }
    ModelConfig post = ladder.back().second;
    post.layernorm = LayerNormPlacement::post_aggregation;
    rows.push_back({att, 5, "post_aggregation_ln", post, run_all(post)});
  }
  write_text(fs::path(out_dir) / "ladder.csv", ladder_csv(rows));
  return rows;
}

}  // namespace capmil
