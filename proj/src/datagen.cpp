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

#include "capmil/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace capmil {

using json = nlohmann::json;

void validate(const Exemplar& e) {
  auto fail = [&](const std::string& why) { throw ValidationError("exemplar '" + e.id + "': " + why); };
  if (e.query.rows() != 1 || e.query.cols() < 1) fail("query must be a single non-empty row");
  if (e.target.rows() < 1) fail("bag must hold at least one instance");
  if (e.target.cols() != e.query.cols()) fail("bag width differs from query width");
  if (!e.query.allFinite() || !e.target.allFinite()) fail("non-finite feature");
  if (e.label != 0 && e.label != 1) fail("label must be 0 or 1");
  if (e.key_mask) {
    if (static_cast<Eigen::Index>(e.key_mask->size()) != e.target.rows()) fail("key mask length differs from bag size");
    const bool any_key = std::find(e.key_mask->begin(), e.key_mask->end(), true) != e.key_mask->end();
    if (any_key != (e.label == 1)) fail("label " + std::to_string(e.label) + " inconsistent with key instances");
  }
}

// ---------------------------------------------------------------------------

void GenConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("gen config: " + why); };
  if (channels < 1) fail("channels must be >= 1");
  if (num_classes < 6) fail("num_classes must be >= 6 so every split pool holds two classes");
  if (bag_min < 1) fail("bag_min must be >= 1");
  if (bag_max < bag_min) fail("bag_max must be >= bag_min");
  if (bag_var < 0) fail("bag_var must be >= 0");
  if (key_min < 1 || key_max < key_min) fail("need 1 <= key_min <= key_max");
  if (!(gamma >= 0 && gamma <= 1)) fail("gamma must lie in [0, 1]");
  if (!(sigma >= 0)) fail("sigma must be >= 0");
  if (num_styles < 0) fail("num_styles must be >= 0");
  if (!(positive_rate >= 0 && positive_rate <= 1)) fail("positive_rate must lie in [0, 1]");
  if (n_train < 0 || n_validation < 0 || n_test < 0) fail("split sizes must be >= 0");
}

void write_gen_config(KeyValueConfig& kv, const GenConfig& c) {
  kv.set("num_classes", std::to_string(c.num_classes));
  kv.set("channels", std::to_string(c.channels));
  kv.set("bag_mean", format_double(c.bag_mean));
  kv.set("bag_var", format_double(c.bag_var));
  kv.set("bag_min", std::to_string(c.bag_min));
  kv.set("bag_max", std::to_string(c.bag_max));
  kv.set("key_min", std::to_string(c.key_min));
  kv.set("key_max", std::to_string(c.key_max));
  kv.set("gamma", format_double(c.gamma));
  kv.set("sigma", format_double(c.sigma));
  kv.set("num_styles", std::to_string(c.num_styles));
  kv.set("positive_rate", format_double(c.positive_rate));
  kv.set("n_train", std::to_string(c.n_train));
  kv.set("n_validation", std::to_string(c.n_validation));
  kv.set("n_test", std::to_string(c.n_test));
  kv.set("seed", std::to_string(c.seed));
}

GenConfig read_gen_config(const KeyValueConfig& kv, const GenConfig& d) {
  GenConfig c;
  c.num_classes = kv.get_int("num_classes", d.num_classes);
  c.channels = kv.get_int("channels", d.channels);
  c.bag_mean = kv.get_double("bag_mean", d.bag_mean);
  c.bag_var = kv.get_double("bag_var", d.bag_var);
  c.bag_min = kv.get_int("bag_min", d.bag_min);
  c.bag_max = kv.get_int("bag_max", d.bag_max);
  c.key_min = kv.get_int("key_min", d.key_min);
  c.key_max = kv.get_int("key_max", d.key_max);
  c.gamma = kv.get_double("gamma", d.gamma);
  c.sigma = kv.get_double("sigma", d.sigma);
  c.num_styles = kv.get_int("num_styles", d.num_styles);
  c.positive_rate = kv.get_double("positive_rate", d.positive_rate);
  c.n_train = kv.get_int("n_train", d.n_train);
  c.n_validation = kv.get_int("n_validation", d.n_validation);
  c.n_test = kv.get_int("n_test", d.n_test);
  c.seed = kv.get_u64("seed", d.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Matrix make_class_prototypes(int num_classes, int channels, Rng& rng) {
  if (num_classes < 1 || channels < 1) throw ContractError("make_class_prototypes: empty shape");
  return normal_matrix(num_classes, channels, 1.0, rng);
}

Exemplar sample_exemplar(const GenConfig& cfg, const Prototypes& protos, const std::vector<int>& pool, Rng& rng,
                         std::string id) {
  if (pool.size() < 2) throw ConfigError("sample_exemplar: class pool needs at least two classes");
  const int c = cfg.channels;
  if (protos.classes.cols() != c) throw DimensionError("sample_exemplar: prototype width differs from channels");

  std::bernoulli_distribution positive(cfg.positive_rate);
  std::normal_distribution<double> bag_size(cfg.bag_mean, std::sqrt(cfg.bag_var));
  std::uniform_int_distribution<std::size_t> pick_class(0, pool.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, pool.size() - 2);
  std::uniform_int_distribution<int> key_count(cfg.key_min, cfg.key_max);

  Exemplar e;
  e.id = std::move(id);
  e.label = positive(rng) ? 1 : 0;
  const double drawn = std::round(bag_size(rng));
  const int n = static_cast<int>(std::clamp(drawn, static_cast<double>(cfg.bag_min), static_cast<double>(cfg.bag_max)));
  const std::size_t q_index = pick_class(rng);
  const int q = pool[q_index];

  std::vector<bool> keys(n, false);
  if (e.label == 1) {
    const int k = std::min(key_count(rng), n);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, n - 1);
      std::swap(order[i], order[pick(rng)]);
      keys[order[i]] = true;
    }
  }

  Matrix style;
  if (protos.styles.rows() > 0) {
    std::uniform_int_distribution<Eigen::Index> pick_style(0, protos.styles.rows() - 1);
    style = protos.styles.row(pick_style(rng));
  } else {
    style = normal_matrix(1, c, 1.0, rng);
  }
  const double g = cfg.gamma;
  auto instance = [&](int cls) -> Matrix {
    return g * style + (1.0 - g) * protos.classes.row(cls) + cfg.sigma * normal_matrix(1, c, 1.0, rng);
  };

  e.target.resize(n, c);
  for (int i = 0; i < n; ++i) {
    int cls = q;
    if (!keys[i]) {
      std::size_t other = pick_other(rng);
      if (other >= q_index) ++other;
      cls = pool[other];
    }
    e.target.row(i) = instance(cls);
  }
  e.query = instance(q);
  e.key_mask = std::move(keys);
  return e;
}

DatasetSplit make_splits(const GenConfig& cfg) {
  cfg.validate();
  Prototypes protos;
  {
    Rng rng(derive_seed(cfg.seed, 1));
    protos.classes = make_class_prototypes(cfg.num_classes, cfg.channels, rng);
    if (cfg.num_styles > 0) protos.styles = normal_matrix(cfg.num_styles, cfg.channels, 1.0, rng);
  }

  DatasetSplit split;
  {
    std::vector<int> ids(cfg.num_classes);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(cfg.seed, 2));
    std::shuffle(ids.begin(), ids.end(), rng);
    const int n_val = std::max(2, cfg.num_classes / 5);
    const int n_test = std::max(2, cfg.num_classes / 5);
    const int n_train = cfg.num_classes - n_val - n_test;
    split.train_classes.assign(ids.begin(), ids.begin() + n_train);
    split.validation_classes.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    split.test_classes.assign(ids.begin() + n_train + n_val, ids.end());
  }

  auto generate = [&](const std::vector<int>& pool, int count, std::uint64_t stream, const char* name,
                      bool keep_keys) {
    std::vector<Exemplar> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(cfg.seed, stream, static_cast<std::uint64_t>(i)));
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%06d", name, i);
      Exemplar e = sample_exemplar(cfg, protos, pool, rng, id);
      if (!keep_keys) e.key_mask.reset();
      out.push_back(std::move(e));
    }
    return out;
  };
  split.train = generate(split.train_classes, cfg.n_train, 10, "train", false);
  split.validation = generate(split.validation_classes, cfg.n_validation, 11, "validation", false);
  split.test = generate(split.test_classes, cfg.n_test, 12, "test", true);
  return split;
}

// ---------------------------------------------------------------------------

std::string to_jsonl_line(const Exemplar& e) {
  json j;
  j["id"] = e.id;
  j["query"] = std::vector<double>(e.query.data(), e.query.data() + e.query.size());
  json rows = json::array();
  for (Eigen::Index r = 0; r < e.target.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < e.target.cols(); ++c) row.push_back(e.target(r, c));
    rows.push_back(std::move(row));
  }
  j["target"] = std::move(rows);
  j["label"] = e.label;
  if (e.key_mask) {
    std::vector<int> keys;
    for (std::size_t i = 0; i < e.key_mask->size(); ++i)
      if ((*e.key_mask)[i]) keys.push_back(static_cast<int>(i));
    j["keys"] = keys;
  }
  return j.dump();
}

Exemplar parse_jsonl_line(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& ex) {
    throw ParseError(where + ": " + ex.what());
  }
  Exemplar e;
  try {
    e.id = j.at("id").get<std::string>();
    const auto query = j.at("query").get<std::vector<double>>();
    const auto target = j.at("target").get<std::vector<std::vector<double>>>();
    e.label = j.at("label").get<int>();
    e.query = Eigen::Map<const Matrix>(query.data(), 1, static_cast<Eigen::Index>(query.size()));
    e.target.resize(static_cast<Eigen::Index>(target.size()), static_cast<Eigen::Index>(query.size()));
    for (std::size_t r = 0; r < target.size(); ++r) {
      if (target[r].size() != query.size())
        throw ValidationError("exemplar '" + e.id + "': bag row " + std::to_string(r) + " has the wrong width");
      for (std::size_t c = 0; c < query.size(); ++c) e.target(r, c) = target[r][c];
    }
    if (j.contains("keys")) {
      std::vector<bool> mask(target.size(), false);
      for (int k : j.at("keys").get<std::vector<int>>()) {
        if (k < 0 || static_cast<std::size_t>(k) >= target.size())
          throw ValidationError("exemplar '" + e.id + "': key index " + std::to_string(k) + " out of range");
        mask[k] = true;
      }
      e.key_mask = std::move(mask);
    }
  } catch (const json::exception& ex) {
    throw ParseError(where + ": " + ex.what());
  }
  validate(e);
  return e;
}

std::vector<Exemplar> load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::vector<Exemplar> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.push_back(parse_jsonl_line(line, line_no));
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<Exemplar>& exemplars) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  for (const auto& e : exemplars) out << to_jsonl_line(e) << '\n';
  if (!out) throw IoError("failed writing dataset '" + path + "'");
}

// ---------------------------------------------------------------------------

namespace {
double median(std::vector<int> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}
}  // namespace

BagStats compute_bag_stats(const std::vector<Exemplar>& exemplars) {
  BagStats s;
  s.count = exemplars.size();
  if (exemplars.empty()) return s;
  std::vector<int> sizes, keys;
  int positives = 0;
  for (const auto& e : exemplars) {
    sizes.push_back(e.bag_size());
    positives += e.label;
    if (e.label == 1 && e.key_mask)
      keys.push_back(static_cast<int>(std::count(e.key_mask->begin(), e.key_mask->end(), true)));
  }
  s.bag_mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / sizes.size();
  s.bag_median = median(sizes);
  s.bag_min = *std::min_element(sizes.begin(), sizes.end());
  s.bag_max = *std::max_element(sizes.begin(), sizes.end());
  s.positive_rate = static_cast<double>(positives) / exemplars.size();
  if (!keys.empty()) {
    s.key_mean = std::accumulate(keys.begin(), keys.end(), 0.0) / keys.size();
    s.key_median = median(keys);
    s.key_max = *std::max_element(keys.begin(), keys.end());
  }
  return s;
}

}  // namespace capmil
