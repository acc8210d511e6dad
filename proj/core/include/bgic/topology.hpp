// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace bgic {

// Role of one internal coordinate. Free roles are the reduced representation;
// everything else is pinned to its reference value.
enum class CoordRole {
  kAbsent,   // coordinate does not exist for this atom (first rows)
  kFrozen,
  kBackboneAngle,
  kBackboneDihedral,
  kSidechainDihedral,
};

const char* role_name(CoordRole role);
CoordRole role_from_name(const std::string& name);

struct Atom {
  std::string name;
  std::string element;
  int residue = 0;  // residue 0 is reserved for cap/anchor atoms
  bool backbone = false;
};

// Construction row for one atom: bond to a1, angle through (a1,a2), dihedral
// through (a1,a2,a3). References must point at previously placed atoms.
struct ZRow {
  int a1 = -1, a2 = -1, a3 = -1;
  CoordRole d_role = CoordRole::kAbsent;
  CoordRole theta_role = CoordRole::kAbsent;
  CoordRole phi_role = CoordRole::kAbsent;
};

// Values for every frozen coordinate, one slot per atom (free/absent slots
// are ignored). Bond lengths in Angstrom, angles in radians.
struct ReferenceGeometry {
  std::vector<double> d, theta, phi;

  bool empty() const { return d.empty(); }
  void validate(std::size_t atom_count) const;
};

// Molecular graph plus the construction order and coordinate roles.
class Topology {
 public:
  std::vector<Atom> atoms;
  std::vector<ZRow> zmatrix;  // one row per atom; rows 0..2 have partial coords
  std::vector<std::vector<int>> rigid_groups;
  ReferenceGeometry reference;  // may be empty until fitted

  std::size_t atom_count() const { return atoms.size(); }

  // Throws ConfigError on invalid construction order, bad roles, rigid-group
  // atoms with free coordinates, or backbone atoms not named N/CA/C.
  void validate() const;

  std::vector<int> backbone_atoms() const;
  // Residues that own at least one free coordinate, ascending.
  std::vector<int> flexible_residues() const;
  // C-alpha atom index per flexible residue (-1 when the residue has none).
  std::vector<int> calpha_atoms() const;

  std::size_t count_role(CoordRole role) const;
  std::size_t free_count() const;

  std::string to_json_string() const;
  static Topology from_json_string(const std::string& text);
  static Topology load(const std::string& path);
  void save(const std::string& path) const;
};

}  // namespace bgic
