// SPDX-License-Identifier: Apache-2.0
#include "bgic/topology.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bgic/errors.hpp"

namespace bgic {

using nlohmann::json;

const char* role_name(CoordRole role) {
  switch (role) {
    case CoordRole::kAbsent: return "absent";
    case CoordRole::kFrozen: return "frozen";
    case CoordRole::kBackboneAngle: return "backbone_angle";
    case CoordRole::kBackboneDihedral: return "backbone_dihedral";
    case CoordRole::kSidechainDihedral: return "sidechain_dihedral";
  }
  return "absent";
}

CoordRole role_from_name(const std::string& name) {
  if (name == "absent") return CoordRole::kAbsent;
  if (name == "frozen") return CoordRole::kFrozen;
  if (name == "backbone_angle") return CoordRole::kBackboneAngle;
  if (name == "backbone_dihedral") return CoordRole::kBackboneDihedral;
  if (name == "sidechain_dihedral") return CoordRole::kSidechainDihedral;
  throw ConfigError("unknown coordinate role '" + name + "'");
}

void ReferenceGeometry::validate(std::size_t atom_count) const {
  if (empty()) return;
  if (d.size() != atom_count || theta.size() != atom_count || phi.size() != atom_count) {
    throw ConfigError("reference geometry size does not match atom count");
  }
  for (std::size_t i = 1; i < atom_count; ++i) {
    if (d[i] <= 0.0) throw ConfigError("reference bond length must be positive");
  }
}

void Topology::validate() const {
  const int n = static_cast<int>(atoms.size());
  if (n == 0) throw ConfigError("topology has no atoms");
  reference.validate(atoms.size());
  if (zmatrix.size() != atoms.size()) {
    throw ConfigError("topology: zmatrix row count does not match atom count");
  }

  for (int i = 0; i < n; ++i) {
    const ZRow& row = zmatrix[i];
    const bool need_a1 = i >= 1, need_a2 = i >= 2, need_a3 = i >= 3;
    auto check_ref = [&](int ref, bool needed, const char* which) {
      if (!needed) {
        if (ref != -1) {
          throw ConfigError("topology: atom " + std::to_string(i) + " has unexpected ref " +
                            which);
        }
        return;
      }
      if (ref < 0 || ref >= i) {
        throw ConfigError("topology: atom " + std::to_string(i) + " ref " + which +
                          " must point at a previously placed atom");
      }
    };
    check_ref(row.a1, need_a1, "a1");
    check_ref(row.a2, need_a2, "a2");
    check_ref(row.a3, need_a3, "a3");
    if (need_a3 && (row.a1 == row.a2 || row.a1 == row.a3 || row.a2 == row.a3)) {
      throw ConfigError("topology: atom " + std::to_string(i) + " has repeated refs");
    }

    auto check_role = [&](CoordRole role, bool exists, std::initializer_list<CoordRole> allowed,
                          const char* which) {
      if (!exists) {
        if (role != CoordRole::kAbsent) {
          throw ConfigError("topology: atom " + std::to_string(i) + " tags a missing " + which +
                            " coordinate");
        }
        return;
      }
      if (std::find(allowed.begin(), allowed.end(), role) == allowed.end()) {
        throw ConfigError(std::string("topology: invalid role ") + role_name(role) + " for " +
                          which + " of atom " + std::to_string(i));
      }
    };
    check_role(row.d_role, need_a1, {CoordRole::kFrozen}, "bond length");
    check_role(row.theta_role, need_a2, {CoordRole::kFrozen, CoordRole::kBackboneAngle},
               "bond angle");
    check_role(row.phi_role, need_a3,
               {CoordRole::kFrozen, CoordRole::kBackboneDihedral, CoordRole::kSidechainDihedral},
               "dihedral");
  }

  for (int i = 0; i < n; ++i) {
    if (atoms[i].backbone && atoms[i].name != "N" && atoms[i].name != "CA" &&
        atoms[i].name != "C") {
      throw ConfigError("topology: backbone atoms must be N, CA or C (atom " +
                        std::to_string(i) + " is '" + atoms[i].name + "')");
    }
  }

  // Rigid bodies may not own free coordinates.
  for (const auto& group : rigid_groups) {
    for (int a : group) {
      if (a < 0 || a >= n) throw ConfigError("topology: rigid group atom out of range");
      const ZRow& row = zmatrix[a];
      for (CoordRole r : {row.d_role, row.theta_role, row.phi_role}) {
        if (r != CoordRole::kAbsent && r != CoordRole::kFrozen) {
          throw ConfigError("topology: rigid-group atom " + std::to_string(a) +
                            " has a free coordinate");
        }
      }
    }
  }
}

std::vector<int> Topology::backbone_atoms() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(atoms.size()); ++i) {
    if (atoms[i].backbone) out.push_back(i);
  }
  return out;
}

std::vector<int> Topology::flexible_residues() const {
  std::set<int> residues;
  for (std::size_t i = 0; i < zmatrix.size(); ++i) {
    const ZRow& row = zmatrix[i];
    for (CoordRole r : {row.theta_role, row.phi_role}) {
      if (r == CoordRole::kBackboneAngle || r == CoordRole::kBackboneDihedral ||
          r == CoordRole::kSidechainDihedral) {
        residues.insert(atoms[i].residue);
        break;
      }
    }
  }
  return std::vector<int>(residues.begin(), residues.end());
}

std::vector<int> Topology::calpha_atoms() const {
  std::vector<int> out;
  for (int r : flexible_residues()) {
    int ca = -1;
    for (int i = 0; i < static_cast<int>(atoms.size()); ++i) {
      if (atoms[i].residue == r && atoms[i].name == "CA") {
        ca = i;
        break;
      }
    }
    out.push_back(ca);
  }
  return out;
}

std::size_t Topology::count_role(CoordRole role) const {
  std::size_t count = 0;
  for (const ZRow& row : zmatrix) {
    if (row.d_role == role) ++count;
    if (row.theta_role == role) ++count;
    if (row.phi_role == role) ++count;
  }
  return count;
}

std::size_t Topology::free_count() const {
  return count_role(CoordRole::kBackboneAngle) + count_role(CoordRole::kBackboneDihedral) +
         count_role(CoordRole::kSidechainDihedral);
}

std::string Topology::to_json_string() const {
  json j;
  j["format"] = "bgic-topology";
  j["version"] = 1;
  j["atoms"] = json::array();
  for (const Atom& a : atoms) {
    j["atoms"].push_back({{"name", a.name},
                          {"element", a.element},
                          {"residue", a.residue},
                          {"backbone", a.backbone}});
  }
  j["zmatrix"] = json::array();
  for (std::size_t i = 0; i < zmatrix.size(); ++i) {
    const ZRow& row = zmatrix[i];
    json r;
    r["atom"] = i;
    r["refs"] = {row.a1, row.a2, row.a3};
    r["d"] = role_name(row.d_role);
    r["theta"] = role_name(row.theta_role);
    r["phi"] = role_name(row.phi_role);
    j["zmatrix"].push_back(r);
  }
  j["rigid_groups"] = rigid_groups;
  if (!reference.empty()) {
    j["reference"] = {{"d", reference.d}, {"theta", reference.theta}, {"phi", reference.phi}};
  }
  return j.dump(2) + "\n";
}

Topology Topology::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("topology: invalid JSON: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "bgic-topology") {
    throw FormatError("topology: missing or wrong format tag");
  }
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw FormatError("topology: unsupported version");
  }
  Topology t;
  for (const auto& a : j.at("atoms")) {
    Atom atom;
    atom.name = a.at("name").get<std::string>();
    atom.element = a.at("element").get<std::string>();
    atom.residue = a.at("residue").get<int>();
    atom.backbone = a.at("backbone").get<bool>();
    t.atoms.push_back(atom);
  }
  t.zmatrix.resize(t.atoms.size());
  for (const auto& r : j.at("zmatrix")) {
    const std::size_t i = r.at("atom").get<std::size_t>();
    if (i >= t.zmatrix.size()) throw FormatError("topology: zmatrix row out of range");
    ZRow row;
    row.a1 = r.at("refs")[0].get<int>();
    row.a2 = r.at("refs")[1].get<int>();
    row.a3 = r.at("refs")[2].get<int>();
    row.d_role = role_from_name(r.at("d").get<std::string>());
    row.theta_role = role_from_name(r.at("theta").get<std::string>());
    row.phi_role = role_from_name(r.at("phi").get<std::string>());
    t.zmatrix[i] = row;
  }
  if (j.contains("rigid_groups")) {
    t.rigid_groups = j["rigid_groups"].get<std::vector<std::vector<int>>>();
  }
  if (j.contains("reference")) {
    t.reference.d = j["reference"].at("d").get<std::vector<double>>();
    t.reference.theta = j["reference"].at("theta").get<std::vector<double>>();
    t.reference.phi = j["reference"].at("phi").get<std::vector<double>>();
  }
  t.validate();
  return t;
}

Topology Topology::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open topology file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

void Topology::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write topology file '" + path + "'");
  out << to_json_string();
}

}  // namespace bgic
