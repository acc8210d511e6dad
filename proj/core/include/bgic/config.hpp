// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "bgic/mcmc.hpp"
#include "bgic/schedule.hpp"
#include "bgic/split_flow.hpp"

namespace bgic {

struct EvalConfig {
  std::size_t batch_size = 1000;  // distance-distortion batch
  std::size_t batches = 10;
  std::size_t samples = 20000;     // energy/ESS sample set
  double holdout_fraction = 0.1;   // tail of the dataset reserved for NLL
  std::size_t hist_bins = 80;
  std::size_t feature_rows = 1000;  // raw distance-vector export cap
  std::uint64_t seed = 1;
};

struct DataGenConfig {
  std::size_t frames = 20000;
  McmcConfig mcmc;
};

struct TargetConfig {
  std::string forcefield_path;
  double temperature = 300.0;
};

// One file drives every command. Unknown keys are rejected; referenced input
// paths are checked per command.
struct RunConfig {
  std::string topology_path;
  std::string dataset_path;
  std::string output_dir = "out";
  SplitFlowConfig architecture;
  TrainConfig training;
  StageSchedule schedule;
  TargetConfig target;
  DataGenConfig datagen;
  EvalConfig evaluation;

  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& text);
  static RunConfig load(const std::string& path);
};

}  // namespace bgic
