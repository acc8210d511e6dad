// SPDX-License-Identifier: Apache-2.0
#include "bgic/coords.hpp"

#include <algorithm>
#include <numbers>
#include <set>

#include "bgic/errors.hpp"

namespace bgic {

std::size_t CoordinateLayout::count_kind(CoordKind k) const {
  std::size_t n = 0;
  for (const CoordInfo& c : coords) {
    if (c.kind == k) ++n;
  }
  return n;
}

std::vector<std::size_t> CoordinateLayout::backbone_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].role == CoordRole::kBackboneAngle ||
        coords[i].role == CoordRole::kBackboneDihedral) {
      out.push_back(i);
    }
  }
  return out;
}

std::vector<std::size_t> CoordinateLayout::sidechain_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (coords[i].role == CoordRole::kSidechainDihedral) out.push_back(i);
  }
  return out;
}

std::vector<int> CoordinateLayout::residues() const {
  std::set<int> r;
  for (const CoordInfo& c : coords) r.insert(c.residue);
  return std::vector<int>(r.begin(), r.end());
}

CoordinateLayout CoordinateLayout::from_topology(const Topology& top) {
  constexpr double pi = std::numbers::pi;
  CoordinateLayout layout;
  auto push = [&](CoordRole role, int residue) {
    CoordInfo info;
    info.role = role;
    info.residue = residue;
    if (role == CoordRole::kBackboneAngle) {
      info.kind = CoordKind::kBoundedAngle;
      info.lo = kAngleMargin;
      info.hi = pi - kAngleMargin;
    } else {
      info.kind = CoordKind::kCircular;
      info.lo = -pi;
      info.hi = pi;
    }
    layout.coords.push_back(info);
  };
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.zmatrix[i].theta_role == CoordRole::kBackboneAngle) {
      push(CoordRole::kBackboneAngle, top.atoms[i].residue);
    }
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.zmatrix[i].phi_role == CoordRole::kBackboneDihedral) {
      push(CoordRole::kBackboneDihedral, top.atoms[i].residue);
    }
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.zmatrix[i].phi_role == CoordRole::kSidechainDihedral) {
      push(CoordRole::kSidechainDihedral, top.atoms[i].residue);
    }
  }
  if (layout.coords.empty()) return layout;
  return layout;
}

CoordinateLayout CoordinateLayout::linear(std::size_t n) {
  CoordinateLayout layout;
  for (std::size_t i = 0; i < n; ++i) {
    CoordInfo info;
    info.kind = CoordKind::kLinear;
    info.role = CoordRole::kAbsent;
    info.residue = static_cast<int>(i) + 1;  // one pseudo-residue per coordinate
    layout.coords.push_back(info);
  }
  return layout;
}

}  // namespace bgic
