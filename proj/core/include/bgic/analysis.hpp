// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bgic/geometry.hpp"
#include "bgic/topology.hpp"

namespace bgic {

// Minimal RMSD over rigid alignments (Kabsch, proper rotations only).
double rmsd_aligned(const CartesianState& a, const CartesianState& b);

// Rigidly aligns `mobile` onto `target` in place (all atoms weighted equally).
void kabsch_align(CartesianState& mobile, const CartesianState& target);

// Per-residue C-alpha fluctuation about the batch mean after Kabsch
// alignment to the mean structure (iterated twice). Batch must hold >= 2
// structures.
std::vector<double> rmsf(const Topology& top, std::vector<CartesianState> batch);

// Mean absolute entrywise difference of backbone distance vectors.
// Paired mode matches the i-th sample of q with the i-th sample of p and
// expects equal batch sizes; all-pairs mode averages over the full product
// (quadratic, for small batches).
double distance_distortion(const Topology& top, const std::vector<CartesianState>& samples_q,
                           const std::vector<CartesianState>& samples_p, bool all_pairs = false);

}  // namespace bgic
