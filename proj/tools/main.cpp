// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <string>

#include "bgic/commands.hpp"
#include "bgic/errors.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Boltzmann-generator flows over reduced internal coordinates"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int threads = 1;
  app.add_option("--config", config_path, "Run configuration (JSON)")->required();
  app.add_option("--seed", seed, "Override the command's seed")
      ->each([&](const std::string&) { seed_set = true; });
  app.add_option("--out", out_dir, "Override the output directory");
  app.add_option("--threads", threads, "Worker threads for evaluation batches")
      ->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("generate-data", "Sample a synthetic trajectory by MCMC");

  auto* train = app.add_subcommand("train", "Run the staged training schedule");
  std::string resume;
  bool dry_run = false;
  train->add_option("--resume", resume, "Continue after the checkpoint's stage");
  train->add_flag("--dry-run", dry_run, "Validate the config and report the parameter count");

  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  std::string sample_ckpt;
  std::size_t sample_n = 10000;
  sample->add_option("--checkpoint", sample_ckpt, "Flow checkpoint")->required();
  sample->add_option("-n,--samples", sample_n, "Sample count");

  auto* eval = app.add_subcommand("evaluate", "Compute the evaluation report");
  std::string eval_ckpt;
  eval->add_option("--checkpoint", eval_ckpt, "Flow checkpoint")->required();

  auto* inspect = app.add_subcommand("inspect", "Print topology/config/checkpoint summaries");
  std::string inspect_ckpt;
  inspect->add_option("--checkpoint", inspect_ckpt, "Flow checkpoint");

  CLI11_PARSE(app, argc, argv);

  bgic::CommandOptions opts;
  if (seed_set) opts.seed = seed;
  if (!out_dir.empty()) opts.out = out_dir;
  opts.threads = threads;

  bgic::RunConfig config = bgic::RunConfig::load(config_path);
  if (gen->parsed()) bgic::cmd_generate_data(config, opts, std::cout);
  if (train->parsed()) bgic::cmd_train(config, opts, resume, dry_run, std::cout);
  if (sample->parsed()) bgic::cmd_sample(config, opts, sample_ckpt, sample_n, std::cout);
  if (eval->parsed()) bgic::cmd_evaluate(config, opts, eval_ckpt, std::cout);
  if (inspect->parsed()) bgic::cmd_inspect(config, opts, inspect_ckpt, std::cout);
  return bgic::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const bgic::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return bgic::kExitConfig;
  } catch (const bgic::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return bgic::kExitFormat;
  } catch (const bgic::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return bgic::kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bgic::kExitNumeric;
  }
}
