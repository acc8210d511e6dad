// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "bgic/energy.hpp"
#include "bgic/topology.hpp"

namespace bgic {

// A synthetic chain molecule: a three-atom anchor cap (residue 0) followed
// by R residues of N, CA, C backbone beads plus one CB side bead. Every
// residue contributes three free backbone bond angles, three free backbone
// dihedrals and one free side-chain dihedral; everything else is frozen at
// its reference value. Torsion minima are set so the ground state folds into
// a loose helix; the side-chain torsion is threefold.
struct ToySystem {
  Topology topology;  // includes reference geometry
  ToyForceField forcefield;
};

ToySystem make_toy_chain(int residues);

}  // namespace bgic
