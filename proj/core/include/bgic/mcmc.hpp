// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "bgic/coords.hpp"
#include "bgic/dataset.hpp"
#include "bgic/energy.hpp"
#include "bgic/rng.hpp"

namespace bgic {

struct McmcConfig {
  std::size_t burn_in = 50000;
  std::size_t thinning = 10;
  std::size_t chains = 8;
  double step_angle = 0.04;     // proposal sd for bounded coordinates (rad)
  double step_dihedral = 0.10;  // proposal sd for circular coordinates
  double step_linear = 0.25;
};

struct McmcDiagnostics {
  double acceptance_rate = 0.0;
  // Integrated autocorrelation time of the energy series on retained frames.
  double autocorr_time = 0.0;
  std::vector<double> coord_means;
};

// Random-walk Metropolis over all coordinates at once. Bounded coordinates
// reject proposals outside their interval; circular ones wrap. Chains run
// as one batched energy evaluation per step and their frames interleave
// deterministically (chain-major within each retained step).
TrajectoryDataset run_mcmc(const EnergyModel& target, const CoordinateLayout& layout,
                           const std::vector<double>& init, std::size_t n_frames,
                           const McmcConfig& config, Rng rng,
                           McmcDiagnostics* diagnostics = nullptr);

}  // namespace bgic
