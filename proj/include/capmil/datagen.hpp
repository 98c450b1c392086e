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

// Synthetic verification exemplars and JSONL ingestion.
//
// Every latent class c has a prototype mu_c. An exemplar draws a style d
// shared by all of its instances; an instance of class c is
//     x = gamma * d + (1 - gamma) * mu_c + sigma * eps,   eps ~ N(0, I).
// gamma near 1 makes every instance of a bag look alike.

#include <cstdint>
#include <string>
#include <vector>

#include "capmil/exemplar.hpp"
#include "capmil/kvconfig.hpp"
#include "capmil/params.hpp"

namespace capmil {

struct GenConfig {
  int num_classes = 200;
  int channels = 64;
  double bag_mean = 10.0;
  double bag_var = 2.0;
  int bag_min = 3;
  int bag_max = 64;
  int key_min = 1;  // key count ~ uniform{key_min..key_max}, truncated to N
  int key_max = 3;
  double gamma = 0.7;
  double sigma = 0.3;
  // > 0: styles come from a fixed table of this many prototypes (like the
  // ten digits); 0: every exemplar draws a fresh style.
  int num_styles = 10;
  double positive_rate = 0.5;
  int n_train = 2000;
  int n_validation = 1000;
  int n_test = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

void write_gen_config(KeyValueConfig& kv, const GenConfig& c);
GenConfig read_gen_config(const KeyValueConfig& kv, const GenConfig& defaults = {});

struct Prototypes {
  Matrix classes;  // L x C
  Matrix styles;   // num_styles x C (empty when styles are drawn fresh)
};

Matrix make_class_prototypes(int num_classes, int channels, Rng& rng);

// class_pool: the latent classes this exemplar may use (>= 2 of them).
Exemplar sample_exemplar(const GenConfig& config, const Prototypes& prototypes, const std::vector<int>& class_pool,
                         Rng& rng, std::string id = {});

struct DatasetSplit {
  std::vector<Exemplar> train, validation, test;
  std::vector<int> train_classes, validation_classes, test_classes;
};

// Disjoint class pools per split; only the test split keeps key masks.
DatasetSplit make_splits(const GenConfig& config);

// One JSON object per line:
// {"id": str, "query": [C], "target": [[C] x N], "label": 0|1, "keys": [indices]}
std::vector<Exemplar> load_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<Exemplar>& exemplars);
std::string to_jsonl_line(const Exemplar& e);
Exemplar parse_jsonl_line(const std::string& line, std::size_t line_no = 0);

struct BagStats {
  std::size_t count = 0;
  double bag_mean = 0, bag_median = 0;
  int bag_min = 0, bag_max = 0;
  double positive_rate = 0;
  // Over positive exemplars with key masks; zero when there are none.
  double key_mean = 0, key_median = 0;
  int key_max = 0;
};

BagStats compute_bag_stats(const std::vector<Exemplar>& exemplars);

}  // namespace capmil
