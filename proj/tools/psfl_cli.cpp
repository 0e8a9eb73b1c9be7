// SPDX-License-Identifier: Apache-2.0
//
// psfl — deterministic simulator of personalized semantic federated learning.
//
//   psfl run <config> --out <dir>     run an experiment, write CSV artifacts
//   psfl validate <config>            parse and validate a config file
//   psfl compare <dirs...> --out <csv> align round ledgers across runs
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psfl/config.hpp"
#include "psfl/errors.hpp"
#include "psfl/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Personalized semantic federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, compare_out;
  std::vector<std::string> compare_dirs;

  CLI::App* run = app.add_subcommand("run", "Run an experiment");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_dir, "Artifact output directory")->required();

  CLI::App* validate = app.add_subcommand("validate", "Validate a config file");
  validate->add_option("config", config_path, "Experiment config file")->required();

  CLI::App* compare = app.add_subcommand("compare", "Compare artifact directories");
  compare->add_option("dirs", compare_dirs, "Artifact directories (>= 2)")->required();
  compare->add_option("--out", compare_out, "Comparison CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const psfl::ExperimentConfig config = psfl::parse_config(config_path);
      psfl::runner::run_experiment(config, out_dir);
      std::printf("artifacts written to %s\n", out_dir.c_str());
    } else if (validate->parsed()) {
      psfl::parse_config(config_path);
      std::printf("config ok: %s\n", config_path.c_str());
    } else if (compare->parsed()) {
      psfl::runner::compare_runs(compare_dirs, compare_out);
      std::printf("comparison written to %s\n", compare_out.c_str());
    }
  } catch (const psfl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
