// SPDX-License-Identifier: Apache-2.0
#include "bgic/toy_chain.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "bgic/errors.hpp"

namespace bgic {

namespace {

constexpr double kPi = std::numbers::pi;

// Bead geometry (Angstrom / radians), loosely peptide-like.
constexpr double kCapBond = 1.50;
constexpr double kCapAngle = 1.90;
constexpr double kBondCN = 1.33;
constexpr double kBondNCa = 1.46;
constexpr double kBondCaC = 1.52;
constexpr double kBondCaCb = 1.53;
constexpr double kAngleEq = 1.94;   // free backbone angles relax here
constexpr double kAngleCb = 1.91;   // frozen side-bead angle
constexpr double kAngleK = 50.0;    // kcal/mol/rad^2
constexpr double kBondK = 300.0;    // kcal/mol/A^2

// Torsion minima for the three backbone dihedrals per residue; minimum of
// A*(1+cos(phi - phase)) sits at phase + pi.
constexpr double kPsiMin = -0.78;
constexpr double kOmegaMin = kPi;
constexpr double kPhiMin = -1.05;
constexpr double kPsiAmp = 1.2;
constexpr double kOmegaAmp = 2.5;
constexpr double kPhiAmp = 1.2;
constexpr double kSideAmp = 0.8;  // threefold

constexpr double kLJEpsilon = 0.05;
constexpr double kLJSigma = 2.6;

double phase_for_minimum(double minimum, int multiplicity) {
  // arg = m*phi - phase must equal pi at the minimum
  double phase = multiplicity * minimum - kPi;
  while (phase < -kPi) phase += 2.0 * kPi;
  while (phase >= kPi) phase -= 2.0 * kPi;
  return phase;
}

}  // namespace

ToySystem make_toy_chain(int residues) {
  if (residues < 1) throw ConfigError("toy chain needs at least one residue");
  ToySystem sys;
  Topology& top = sys.topology;

  auto add_atom = [&](const std::string& name, const std::string& element, int residue,
                      bool backbone) {
    top.atoms.push_back({name, element, residue, backbone});
    top.zmatrix.emplace_back();
    return static_cast<int>(top.atoms.size()) - 1;
  };

  const std::size_t natoms = 3 + 4 * static_cast<std::size_t>(residues);
  top.reference.d.assign(natoms, 1.0);
  top.reference.theta.assign(natoms, 0.0);
  top.reference.phi.assign(natoms, 0.0);

  auto set_row = [&](int atom, int a1, int a2, int a3, double d, CoordRole theta_role,
                     double theta_ref, CoordRole phi_role) {
    ZRow& row = top.zmatrix[atom];
    row.a1 = a1;
    row.a2 = a2;
    row.a3 = a3;
    row.d_role = a1 >= 0 ? CoordRole::kFrozen : CoordRole::kAbsent;
    row.theta_role = a2 >= 0 ? theta_role : CoordRole::kAbsent;
    row.phi_role = a3 >= 0 ? phi_role : CoordRole::kAbsent;
    if (a1 >= 0) top.reference.d[atom] = d;
    if (a2 >= 0) top.reference.theta[atom] = theta_ref;
  };

  // Anchor cap: three beads fixing the global frame.
  const int x1 = add_atom("X1", "C", 0, false);
  const int x2 = add_atom("X2", "C", 0, false);
  const int x3 = add_atom("X3", "C", 0, false);
  set_row(x1, -1, -1, -1, 0.0, CoordRole::kAbsent, 0.0, CoordRole::kAbsent);
  set_row(x2, x1, -1, -1, kCapBond, CoordRole::kAbsent, 0.0, CoordRole::kAbsent);
  set_row(x3, x2, x1, -1, kCapBond, CoordRole::kFrozen, kCapAngle, CoordRole::kAbsent);

  for (int r = 1; r <= residues; ++r) {
    const bool first = r == 1;
    const int prev_n = first ? -1 : 3 + 4 * (r - 2);
    const int prev_ca = first ? x2 : prev_n + 1;
    const int prev_c = first ? x3 : prev_n + 2;
    const int prev_prev = first ? x1 : prev_n;

    const int n = add_atom("N", "N", r, true);
    const int ca = add_atom("CA", "C", r, true);
    const int c = add_atom("C", "C", r, true);
    const int cb = add_atom("CB", "C", r, false);

    set_row(n, prev_c, prev_ca, prev_prev, kBondCN, CoordRole::kBackboneAngle, kAngleEq,
            CoordRole::kBackboneDihedral);
    set_row(ca, n, prev_c, prev_ca, kBondNCa, CoordRole::kBackboneAngle, kAngleEq,
            CoordRole::kBackboneDihedral);
    set_row(c, ca, n, prev_c, kBondCaC, CoordRole::kBackboneAngle, kAngleEq,
            CoordRole::kBackboneDihedral);
    set_row(cb, ca, n, prev_c, kBondCaCb, CoordRole::kFrozen, kAngleCb,
            CoordRole::kSidechainDihedral);
  }
  top.validate();

  // Force-field terms mirror the construction graph.
  ToyForceField& ff = sys.forcefield;
  for (std::size_t i = 1; i < natoms; ++i) {
    const ZRow& row = top.zmatrix[i];
    ff.bonds.push_back({static_cast<int>(i), row.a1, kBondK, top.reference.d[i]});
  }
  for (std::size_t i = 2; i < natoms; ++i) {
    const ZRow& row = top.zmatrix[i];
    const double theta0 =
        row.theta_role == CoordRole::kBackboneAngle ? kAngleEq : top.reference.theta[i];
    ff.angles.push_back({static_cast<int>(i), row.a1, row.a2, kAngleK, theta0});
  }
  for (std::size_t i = 3; i < natoms; ++i) {
    const ZRow& row = top.zmatrix[i];
    if (row.phi_role == CoordRole::kBackboneDihedral) {
      // Pick the minimum by the atom's place within the residue triplet.
      const int slot = static_cast<int>((i - 3) % 4);
      double minimum = kPsiMin, amp = kPsiAmp;
      if (slot == 1) {
        minimum = kOmegaMin;
        amp = kOmegaAmp;
      } else if (slot == 2) {
        minimum = kPhiMin;
        amp = kPhiAmp;
      }
      ff.torsions.push_back({static_cast<int>(i), row.a1, row.a2, row.a3, amp, 1,
                             phase_for_minimum(minimum, 1)});
    } else if (row.phi_role == CoordRole::kSidechainDihedral) {
      ff.torsions.push_back(
          {static_cast<int>(i), row.a1, row.a2, row.a3, kSideAmp, 3, phase_for_minimum(kPi / 3.0, 3)});
    }
  }

  // LJ pairs: everything beyond 1-2 and 1-3 separation in the bond graph.
  std::set<std::pair<int, int>> excluded;
  auto key = [](int i, int j) { return std::make_pair(std::min(i, j), std::max(i, j)); };
  std::vector<std::vector<int>> adj(natoms);
  for (const BondTerm& b : ff.bonds) {
    excluded.insert(key(b.i, b.j));
    adj[static_cast<std::size_t>(b.i)].push_back(b.j);
    adj[static_cast<std::size_t>(b.j)].push_back(b.i);
  }
  for (std::size_t center = 0; center < natoms; ++center) {
    const auto& nb = adj[center];
    for (std::size_t a = 0; a < nb.size(); ++a) {
      for (std::size_t b = a + 1; b < nb.size(); ++b) excluded.insert(key(nb[a], nb[b]));
    }
  }
  for (std::size_t i = 0; i < natoms; ++i) {
    for (std::size_t j = i + 1; j < natoms; ++j) {
      if (!excluded.count(key(static_cast<int>(i), static_cast<int>(j)))) {
        ff.lj_pairs.push_back(
            {static_cast<int>(i), static_cast<int>(j), kLJEpsilon, kLJSigma});
      }
    }
  }
  ff.validate();
  return sys;
}

}  // namespace bgic
