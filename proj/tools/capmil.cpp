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

// capmil: gen | train | eval | sweep | ablate.
//
// Failures print a single line "error: <kind>: <message>" on stderr and exit
// with status 2 (bad usage exits 1 via CLI11).

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "capmil/errors.hpp"
#include "capmil/experiment.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config) {
  auto* opt = cmd->add_option("--config", c.config, "flat key = value experiment file");
  if (needs_config) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "master seed; overrides the config file");
}

capmil::ExperimentConfig resolve(const Common& c) {
  capmil::KeyValueConfig kv = capmil::KeyValueConfig::load(c.config);
  if (c.seed) kv.set("seed", std::to_string(*c.seed));
  return capmil::read_experiment_config(kv);
}

capmil::Logger logger(const capmil::ExperimentConfig& config) {
  if (!config.verbose) return {};
  return [](const std::string& msg) { std::cerr << msg << "\n"; };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-attention pooling for multiple-instance verification"};
  app.require_subcommand(1);

  Common gen, train, sweep, ablate, eval;
  add_common(app.add_subcommand("gen", "write synthetic train/validation/test JSONL and a manifest"), gen, true);
  add_common(app.add_subcommand("train", "train every configured variant for each round"), train, true);
  add_common(app.add_subcommand("sweep", "train and evaluate across training-set or bag sizes"), sweep, true);
  add_common(app.add_subcommand("ablate", "build CAP from the baseline one component at a time"), ablate, true);

  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a test split");
  add_common(eval_cmd, eval, false);
  std::string checkpoint, data;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint.bin from train")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data, "test JSONL file or a directory holding test.jsonl")->required()
      ->check(CLI::ExistingPath);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen")) {
      capmil::cmd_gen(resolve(gen), gen.out);
    } else if (app.got_subcommand("train")) {
      const auto cfg = resolve(train);
      capmil::cmd_train(cfg, train.out, logger(cfg));
    } else if (app.got_subcommand("sweep")) {
      const auto cfg = resolve(sweep);
      capmil::cmd_sweep(cfg, sweep.out, logger(cfg));
    } else if (app.got_subcommand("ablate")) {
      const auto cfg = resolve(ablate);
      capmil::cmd_ablate(cfg, ablate.out, logger(cfg));
    } else if (app.got_subcommand("eval")) {
      capmil::cmd_eval(checkpoint, data, eval.out);
    }
  } catch (const capmil::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
