// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "bgic/topology.hpp"

namespace bgic {

// How a coordinate behaves under transforms and proposals.
enum class CoordKind {
  kBoundedAngle,  // bond angle on (lo, hi), affinely normalized for splines
  kCircular,      // dihedral on [-pi, pi), periodic
  kLinear,        // unbounded real coordinate
};

// Margin keeping bond angles away from the degenerate frame at 0 and pi.
inline constexpr double kAngleMargin = 0.02;

struct CoordInfo {
  CoordKind kind = CoordKind::kLinear;
  CoordRole role = CoordRole::kAbsent;
  int residue = 0;
  double lo = 0.0, hi = 0.0;  // bounded kinds only
};

// Ordered description of the flow's coordinate vector. Order matches the
// canonical reduced layout: backbone angles, backbone dihedrals, side-chain
// dihedrals (each ascending by atom), or plain linear coordinates for
// generic targets.
struct CoordinateLayout {
  std::vector<CoordInfo> coords;

  std::size_t size() const { return coords.size(); }
  std::size_t count_kind(CoordKind k) const;
  // Indices of the backbone channel (angles + backbone dihedrals).
  std::vector<std::size_t> backbone_indices() const;
  std::vector<std::size_t> sidechain_indices() const;
  // Flexible residues in ascending order; token ids are positions here.
  std::vector<int> residues() const;

  static CoordinateLayout from_topology(const Topology& top);
  static CoordinateLayout linear(std::size_t n);
};

}  // namespace bgic
