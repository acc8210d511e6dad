// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bgic/tape.hpp"
#include "bgic/tensor.hpp"
#include "bgic/topology.hpp"

namespace bgic {

struct CartesianState {
  std::vector<double> xyz;  // 3N, row per atom

  std::size_t atom_count() const { return xyz.size() / 3; }
  double x(std::size_t i) const { return xyz[3 * i]; }
  double y(std::size_t i) const { return xyz[3 * i + 1]; }
  double z(std::size_t i) const { return xyz[3 * i + 2]; }
};

// Full internal-coordinate record, one slot per atom. Slots without a
// coordinate (first rows) hold zero.
struct InternalRecord {
  std::vector<double> d, theta, phi;
};

// The reduced representation: backbone bond angles in (0,pi), backbone and
// side-chain dihedrals wrapped to [-pi,pi). Canonical order within each
// block is ascending atom index.
struct InternalState {
  std::vector<double> backbone_angles;
  std::vector<double> backbone_dihedrals;
  std::vector<double> sidechain_dihedrals;

  std::size_t size() const {
    return backbone_angles.size() + backbone_dihedrals.size() + sidechain_dihedrals.size();
  }
  std::vector<double> flatten() const;
  static InternalState unflatten(const Topology& top, const std::vector<double>& flat);
};

double wrap_angle(double phi);  // into [-pi, pi)

// Measurement helpers (plain values).
double bond_angle(const CartesianState& c, int i, int j, int k);         // angle at j
double dihedral_angle(const CartesianState& c, int i, int j, int k, int l);

// Measures every internal coordinate. Rigid-motion invariant. Throws
// NumericError on coincident bonded atoms or collinear reference triples.
InternalRecord cartesian_to_internal(const Topology& top, const CartesianState& cart);

// Extracts the free coordinates in canonical order; frozen values dropped.
InternalState reduce(const Topology& top, const InternalRecord& record);

// Fills frozen slots from the reference and free slots from the state.
InternalRecord expand(const Topology& top, const ReferenceGeometry& ref,
                      const InternalState& state);

// Circular mean for dihedrals, arithmetic mean otherwise.
ReferenceGeometry fit_reference(const Topology& top, const std::vector<CartesianState>& frames);

// Batched atom positions as (batch,)-shaped coordinate tensors.
struct Vec3T {
  ad::Tensor x, y, z;
};

// Sequential natural-extension placement: atom 0 at the origin, atom 1 on
// +x, atom 2 in the xy-plane. Differentiable in every free coordinate.
// `reduced` is (batch, n_free) in canonical order. Throws NumericError when
// a bond angle sits exactly on 0 or pi (degenerate frame).
std::vector<Vec3T> reconstruct_positions(const Topology& top, const ReferenceGeometry& ref,
                                         const ad::Tensor& reduced);

// Upper-triangular backbone pair distances (i<j, lexicographic): (batch, |P|).
ad::Tensor backbone_distances(const Topology& top, const std::vector<Vec3T>& positions);

std::size_t backbone_pair_count(const Topology& top);

// Plain-value conveniences built on the same reconstruction path.
CartesianState to_cartesian(const Topology& top, const ReferenceGeometry& ref,
                            const InternalState& state);
std::vector<CartesianState> to_cartesian_batch(const Topology& top, const ReferenceGeometry& ref,
                                               const std::vector<std::vector<double>>& reduced);
std::vector<double> backbone_distance_vector(const Topology& top, const CartesianState& cart);

}  // namespace bgic
