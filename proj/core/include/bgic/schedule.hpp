// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bgic/dataset.hpp"
#include "bgic/energy.hpp"
#include "bgic/losses.hpp"
#include "bgic/optimizer.hpp"
#include "bgic/split_flow.hpp"

namespace bgic {

// The four stages: likelihood; likelihood + distance-matrix moments;
// all three terms; likelihood + energy. Zero epochs skip a stage.
struct StageSpec {
  bool nll = true;
  bool w2 = false;
  bool kl = false;
  std::size_t epochs = 0;
};

struct StageSchedule {
  std::array<StageSpec, 4> stages{{{true, false, false, 200},
                                   {true, true, false, 50},
                                   {true, true, true, 20},
                                   {true, false, true, 10}}};
};

struct TrainConfig {
  AdamWConfig optimizer;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  std::size_t batch_size = 256;
  double w_nll = 1.0;
  double w_w2 = 0.1;
  double w_kl = 0.01;
  // newly activated terms ramp linearly over this fraction of a stage
  double anneal_fraction = 0.1;
  double energy_clip = 1e4;
  std::size_t kl_samples = 0;       // 0: use batch_size
  std::size_t probe_samples = 512;  // per-epoch energy/ESS probe
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  int stage = 0;
  int epoch = 0;  // global epoch counter, 1-based
  double nll = 0.0;
  double w2 = 0.0;
  double kl = 0.0;
  double median_energy = 0.0;  // reduced units, over the probe batch
  double ess = 0.0;            // percent
  double lr = 0.0;
  double wall_seconds = 0.0;
  std::size_t clipped = 0;  // KL energy clamps this epoch
};

struct TrainHooks {
  std::function<void(const EpochMetrics&)> on_epoch;
  std::function<void(int stage, SplitFlow&)> on_stage_end;  // fires even for skipped stages
};

// Runs the staged schedule. `topology` supplies the distance-matrix
// machinery for the W2 term and may be null when no stage enables it.
// Deterministic given the config seed. Throws NumericError with stage,
// epoch and term values when a loss turns non-finite.
std::vector<EpochMetrics> run_schedule(SplitFlow& flow, const TrajectoryDataset& data,
                                       const EnergyModel& target, const Topology* topology,
                                       const StageSchedule& schedule, const TrainConfig& config,
                                       const TrainHooks& hooks = {});

}  // namespace bgic
