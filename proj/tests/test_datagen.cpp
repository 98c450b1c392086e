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


#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "capmil/datagen.hpp"
#include "capmil/models.hpp"
#include "support.hpp"

using namespace capmil;

namespace {

GenConfig tiny() {
  GenConfig c;
  c.channels = 8;
  c.num_classes = 20;
  c.n_train = 40;
  c.n_validation = 10;
  c.n_test = 10;
  c.seed = 5;
  return c;
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

bool same(const Exemplar& a, const Exemplar& b) {
  return a.id == b.id && a.label == b.label && a.key_mask == b.key_mask && a.query.rows() == b.query.rows() &&
         a.target.rows() == b.target.rows() && (a.query.array() == b.query.array()).all() &&
         (a.target.array() == b.target.array()).all();
}

}  // namespace

TEST_SUITE("datagen") {
  TEST_CASE("class prototypes") {
    Rng a(1), b(1);
    CHECK(make_class_prototypes(1, 4, a).rows() == 1);
    Rng c(9), d(9);
    CHECK((make_class_prototypes(50, 16, c).array() == make_class_prototypes(50, 16, d).array()).all());
    Rng e(3);
    const Matrix p = make_class_prototypes(200, 32, e);
    // Each row mean has variance 1/C; the mean of the L row means has 1/(LC).
    CHECK(std::abs(p.mean()) < 4.0 / std::sqrt(32.0 * 200.0));
  }

  TEST_CASE("sampled exemplars follow the bag labelling rule") {
    GenConfig cfg = tiny();
    Rng rng(2);
    Prototypes protos{make_class_prototypes(cfg.num_classes, cfg.channels, rng), Matrix()};
    const std::vector<int> pool{0, 1, 2, 3};
    int positives = 0;
    for (int i = 0; i < 500; ++i) {
      const Exemplar e = sample_exemplar(cfg, protos, pool, rng);
      CHECK_NOTHROW(validate(e));
      const bool any = std::find(e.key_mask->begin(), e.key_mask->end(), true) != e.key_mask->end();
      CHECK(any == (e.label == 1));
      positives += e.label;
    }
    CHECK(positives > 200);
    CHECK(positives < 300);

    cfg.bag_min = cfg.bag_max = 3;
    cfg.key_min = cfg.key_max = 3;
    cfg.positive_rate = 1.0;
    const Exemplar all = sample_exemplar(cfg, protos, pool, rng);
    CHECK(*all.key_mask == std::vector<bool>(3, true));
    CHECK(all.label == 1);
    cfg.positive_rate = 0.0;
    const Exemplar none = sample_exemplar(cfg, protos, pool, rng);
    CHECK(*none.key_mask == std::vector<bool>(3, false));
    CHECK(none.label == 0);
    CHECK_THROWS_AS(sample_exemplar(cfg, protos, {4}, rng), ConfigError);
  }

  TEST_CASE("noise-free instances sit on their class prototype") {
    GenConfig cfg = tiny();
    cfg.gamma = 0;
    cfg.sigma = 0;
    cfg.positive_rate = 1.0;
    Rng rng(3);
    Prototypes protos{make_class_prototypes(cfg.num_classes, cfg.channels, rng), Matrix()};
    const Exemplar e = sample_exemplar(cfg, protos, {4, 7, 9}, rng);
    for (int n = 0; n < e.bag_size(); ++n) {
      const bool key = (*e.key_mask)[n];
      CHECK(((e.target.row(n) - e.query).norm() == 0.0) == key);
    }
  }

  TEST_CASE("bag sizes under a digit-like setting") {
    GenConfig cfg = tiny();
    cfg.bag_min = 3;
    cfg.bag_max = 25;
    cfg.bag_mean = 6.9;
    cfg.bag_var = 6.4;
    Rng rng(4);
    Prototypes protos{make_class_prototypes(cfg.num_classes, cfg.channels, rng), Matrix()};
    std::vector<Exemplar> es;
    for (int i = 0; i < 10000; ++i) es.push_back(sample_exemplar(cfg, protos, {0, 1, 2, 3, 4}, rng));
    const BagStats s = compute_bag_stats(es);
    CHECK(std::abs(s.bag_mean - 6.9) < 0.1);
    CHECK(s.bag_min >= 3);
    CHECK(s.bag_max <= 25);
    CHECK(s.positive_rate >= 0.48);
    CHECK(s.positive_rate <= 0.52);
    CHECK(s.key_mean >= 1);
    CHECK(s.key_max <= 3);
  }

  TEST_CASE("pair labels rebuild every bag label") {
    GenConfig cfg = tiny();
    cfg.n_test = 2000;
    const DatasetSplit split = make_splits(cfg);
    for (const auto& e : split.test) CHECK(bag_label_from_pairs(exemplar_to_pairs(e)) == e.label);
  }

  TEST_CASE("splits use disjoint classes and are reproducible") {
    const GenConfig cfg = tiny();
    const DatasetSplit a = make_splits(cfg);
    const DatasetSplit b = make_splits(cfg);
    auto disjoint = [](const std::vector<int>& x, const std::vector<int>& y) {
      std::set<int> s(x.begin(), x.end());
      for (int v : y)
        if (s.count(v)) return false;
      return true;
    };
    CHECK(disjoint(a.train_classes, a.validation_classes));
    CHECK(disjoint(a.train_classes, a.test_classes));
    CHECK(disjoint(a.validation_classes, a.test_classes));
    CHECK(a.train.size() == 40);
    CHECK(a.validation.size() == 10);
    CHECK(a.test.size() == 10);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(same(a.train[i], b.train[i]));
    CHECK_FALSE(a.train.front().key_mask.has_value());
    CHECK(a.test.front().key_mask.has_value());
    GenConfig other = cfg;
    other.seed = 6;
    CHECK_FALSE(same(make_splits(other).train.front(), a.train.front()));
  }

  TEST_CASE("jsonl lines") {
    const std::string ok = R"({"id":"a","query":[1,2],"target":[[1,2],[3,4]],"label":1,"keys":[1]})";
    const Exemplar e = parse_jsonl_line(ok, 1);
    CHECK(e.bag_size() == 2);
    CHECK(*e.key_mask == std::vector<bool>{false, true});
    CHECK_THROWS_AS(parse_jsonl_line(R"({"id":"a","query":[1,2],"target":[[1,2]],"label":1,"keys":[]})", 1),
                    ValidationError);
    CHECK_THROWS_AS(parse_jsonl_line(R"({"id":"a","query":[1,2],"target":[[1,2]],"label":1,"keys":[4]})", 1),
                    ValidationError);
    CHECK_THROWS_AS(parse_jsonl_line(R"({"id":"a","query":[1,2],"target":[[1]],"label":0})", 1), ValidationError);
    CHECK_THROWS_AS(parse_jsonl_line(R"({"id":"a","query":[1,2],"target":[],"label":0})", 1), ValidationError);
    CHECK_THROWS_AS(parse_jsonl_line(R"({"id":"a","query":[1,2],"label":0})", 1), ParseError);
    CHECK_THROWS_AS(parse_jsonl_line("{not json", 3), ParseError);
    CHECK_NOTHROW(parse_jsonl_line(R"({"id":"b","query":[1],"target":[[1]],"label":1})", 1));
  }

  TEST_CASE("jsonl files round trip exactly") {
    const DatasetSplit split = make_splits(tiny());
    const std::string path = temp_file("capmil_roundtrip.jsonl");
    write_jsonl(path, split.test);
    const auto back = load_jsonl(path);
    REQUIRE(back.size() == split.test.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(same(back[i], split.test[i]));
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_jsonl(temp_file("capmil_no_such_file.jsonl")), IoError);
  }

  TEST_CASE("gen config validation and round trip") {
    GenConfig c = tiny();
    c.gamma = 0.25;
    KeyValueConfig kv;
    write_gen_config(kv, c);
    const GenConfig back = read_gen_config(KeyValueConfig::parse(kv.to_string()));
    CHECK(back.gamma == 0.25);
    CHECK(back.channels == 8);
    CHECK(back.seed == 5);
    c.gamma = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny();
    c.bag_max = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
