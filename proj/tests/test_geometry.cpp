// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bgic/analysis.hpp"
#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"
#include "bgic/rng.hpp"
#include "bgic/toy_chain.hpp"

using namespace bgic;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

// Four beads in a row: 0-1-2-3, full coordinate set on atom 3.
Topology four_atom_chain() {
  Topology t;
  t.atoms = {{"X1", "C", 0, false}, {"X2", "C", 0, false}, {"X3", "C", 0, false},
             {"X4", "C", 0, false}};
  t.zmatrix.resize(4);
  t.zmatrix[1] = {0, -1, -1, CoordRole::kFrozen, CoordRole::kAbsent, CoordRole::kAbsent};
  t.zmatrix[2] = {1, 0, -1, CoordRole::kFrozen, CoordRole::kFrozen, CoordRole::kAbsent};
  t.zmatrix[3] = {2, 1, 0, CoordRole::kFrozen, CoordRole::kFrozen, CoordRole::kFrozen};
  t.validate();
  return t;
}

CartesianState rigid_motion(const CartesianState& c, const double rot[3][3],
                            const double trans[3]) {
  CartesianState out = c;
  for (std::size_t i = 0; i < c.atom_count(); ++i) {
    const double p[3] = {c.x(i), c.y(i), c.z(i)};
    for (int r = 0; r < 3; ++r) {
      out.xyz[3 * i + static_cast<std::size_t>(r)] =
          rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + trans[r];
    }
  }
  return out;
}

void random_rotation(Rng& rng, double rot[3][3]) {
  // Compose three axis rotations; proper rotation by construction.
  const double a = rng.uniform(-kPi, kPi), b = rng.uniform(-kPi, kPi),
               g = rng.uniform(-kPi, kPi);
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  const double cg = std::cos(g), sg = std::sin(g);
  const double rz[3][3] = {{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}};
  const double ry[3][3] = {{cb, 0, sb}, {0, 1, 0}, {-sb, 0, cb}};
  const double rx[3][3] = {{1, 0, 0}, {0, cg, -sg}, {0, sg, cg}};
  double tmp[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      tmp[i][j] = ry[i][0] * rx[0][j] + ry[i][1] * rx[1][j] + ry[i][2] * rx[2][j];
    }
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      rot[i][j] = rz[i][0] * tmp[0][j] + rz[i][1] * tmp[1][j] + rz[i][2] * tmp[2][j];
    }
  }
}

InternalState random_state(const Topology& top, Rng& rng) {
  InternalState s;
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    const ZRow& row = top.zmatrix[i];
    if (row.theta_role == CoordRole::kBackboneAngle) {
      s.backbone_angles.push_back(rng.uniform(0.4, kPi - 0.4));
    }
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.zmatrix[i].phi_role == CoordRole::kBackboneDihedral) {
      s.backbone_dihedrals.push_back(rng.uniform(-kPi, kPi));
    }
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    if (top.zmatrix[i].phi_role == CoordRole::kSidechainDihedral) {
      s.sidechain_dihedrals.push_back(rng.uniform(-kPi, kPi));
    }
  }
  return s;
}

}  // namespace

TEST_CASE("hand-computed internal coordinates of a bent chain") {
  Topology t = four_atom_chain();
  CartesianState c{{0, 0, 0, 1, 0, 0, 1, 1, 0, 1, 1, 1}};
  InternalRecord rec = cartesian_to_internal(t, c);
  CHECK(rec.d[3] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rec.theta[3] == doctest::Approx(kPi / 2).epsilon(1e-12));
  // right-handed convention pins the sign
  CHECK(rec.phi[3] == doctest::Approx(-kPi / 2).epsilon(1e-12));
}

TEST_CASE("planar zig-zag chain measures a trans dihedral") {
  Topology t = four_atom_chain();
  CartesianState c{{0, 0, 0, 1, 0, 0, 1.5, 0.9, 0, 2.5, 0.9, 0}};
  InternalRecord rec = cartesian_to_internal(t, c);
  CHECK(std::abs(rec.phi[3]) == doctest::Approx(kPi).epsilon(1e-12));
}

TEST_CASE("internal coordinates are invariant to rigid motion") {
  Rng rng(5);
  ToySystem sys = make_toy_chain(3);
  InternalState s = random_state(sys.topology, rng);
  CartesianState cart = to_cartesian(sys.topology, sys.topology.reference, s);
  InternalRecord base = cartesian_to_internal(sys.topology, cart);
  for (int rep = 0; rep < 10; ++rep) {
    double rot[3][3], trans[3] = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    random_rotation(rng, rot);
    InternalRecord moved = cartesian_to_internal(sys.topology, rigid_motion(cart, rot, trans));
    for (std::size_t i = 0; i < sys.topology.atom_count(); ++i) {
      CHECK(moved.d[i] == doctest::Approx(base.d[i]).epsilon(1e-10));
      CHECK(moved.theta[i] == doctest::Approx(base.theta[i]).epsilon(1e-10));
      CHECK(std::abs(wrap_angle(moved.phi[i] - base.phi[i])) < 1e-10);
    }
  }
}

TEST_CASE("collinear reference triple raises a degenerate-geometry error") {
  Topology t = four_atom_chain();
  CartesianState c{{0, 0, 0, 1, 0, 0, 2, 0, 0, 2, 1, 0}};
  CHECK_THROWS_AS(cartesian_to_internal(t, c), NumericError);
}

TEST_CASE("reduce: role counts for a two-residue chain and round trips") {
  ToySystem sys = make_toy_chain(2);
  // three backbone angles and three backbone dihedrals per residue
  CHECK(sys.topology.count_role(CoordRole::kBackboneAngle) == 6);
  CHECK(sys.topology.count_role(CoordRole::kBackboneDihedral) == 6);
  CHECK(sys.topology.count_role(CoordRole::kSidechainDihedral) == 2);

  Rng rng(17);
  InternalState s = random_state(sys.topology, rng);
  CartesianState cart = to_cartesian(sys.topology, sys.topology.reference, s);
  InternalState back = reduce(sys.topology, cartesian_to_internal(sys.topology, cart));
  REQUIRE(back.backbone_angles.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.backbone_angles[i] == doctest::Approx(s.backbone_angles[i]).epsilon(1e-10));
    CHECK(std::abs(wrap_angle(back.backbone_dihedrals[i] - s.backbone_dihedrals[i])) < 1e-8);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(wrap_angle(back.sidechain_dihedrals[i] - s.sidechain_dihedrals[i])) < 1e-8);
  }

  // expand o reduce is the identity on free coordinates
  InternalRecord rec = expand(sys.topology, sys.topology.reference, s);
  InternalState again = reduce(sys.topology, rec);
  CHECK(again.flatten() == s.flatten());
}

TEST_CASE("all-frozen topology reduces to an empty state") {
  Topology t = four_atom_chain();
  InternalRecord rec;
  rec.d = {0, 1, 1, 1};
  rec.theta = {0, 0, 1.5, 1.5};
  rec.phi = {0, 0, 0, 2.0};
  InternalState s = reduce(t, rec);
  CHECK(s.size() == 0);
}

TEST_CASE("reconstruction round trip over 100 random states") {
  ToySystem sys = make_toy_chain(4);
  Rng rng(23);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    InternalState s = random_state(sys.topology, rng);
    CartesianState cart = to_cartesian(sys.topology, sys.topology.reference, s);
    std::vector<double> back =
        reduce(sys.topology, cartesian_to_internal(sys.topology, cart)).flatten();
    std::vector<double> orig = s.flatten();
    for (std::size_t i = 0; i < orig.size(); ++i) {
      worst = std::max(worst, std::abs(wrap_angle(back[i] - orig[i])));
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("dihedral shifted by a full period reconstructs identically") {
  ToySystem sys = make_toy_chain(2);
  Rng rng(29);
  InternalState s = random_state(sys.topology, rng);
  CartesianState a = to_cartesian(sys.topology, sys.topology.reference, s);
  InternalState shifted = s;
  shifted.backbone_dihedrals[2] += 2.0 * kPi;
  CartesianState b = to_cartesian(sys.topology, sys.topology.reference, shifted);
  for (std::size_t i = 0; i < a.xyz.size(); ++i) {
    CHECK(a.xyz[i] == doctest::Approx(b.xyz[i]).epsilon(1e-9));
  }
}

TEST_CASE("degenerate reference frame is rejected") {
  ToySystem sys = make_toy_chain(1);
  sys.topology.reference.theta[2] = kPi;  // frozen cap angle exactly at pi
  Rng rng(31);
  InternalState s = random_state(sys.topology, rng);
  CHECK_THROWS_AS(to_cartesian(sys.topology, sys.topology.reference, s), NumericError);
}

TEST_CASE("reconstruction gradients match finite differences") {
  ToySystem sys = make_toy_chain(2);
  Rng rng(37);
  for (int rep = 0; rep < 10; ++rep) {
    InternalState s = random_state(sys.topology, rng);
    // keep angles away from the margins where the frame degenerates
    for (double& a : s.backbone_angles) a = std::min(std::max(a, 0.4), kPi - 0.4);
    std::vector<double> flat = s.flatten();
    const std::size_t pick_atom = 4 + rng.below(6);
    const std::size_t pick_xyz = rng.below(3);
    auto f = [&](ad::Tape&, const Tensor& x) {
      std::vector<Vec3T> pos = reconstruct_positions(
          sys.topology, sys.topology.reference, ad::reshape(x, {1, flat.size()}));
      const Vec3T& p = pos[pick_atom];
      Tensor coord = pick_xyz == 0 ? p.x : (pick_xyz == 1 ? p.y : p.z);
      return ad::sum(coord);
    };
    CHECK(ad::finite_diff_check(f, Tensor({flat.size()}, flat), 1e-6) < 1e-4);
  }
}

TEST_CASE("backbone distance vector ordering and counting") {
  // two backbone atoms at a known separation
  Topology t;
  t.atoms = {{"N", "N", 1, true}, {"CA", "C", 1, true}};
  t.zmatrix.resize(2);
  t.zmatrix[1] = {0, -1, -1, CoordRole::kFrozen, CoordRole::kAbsent, CoordRole::kAbsent};
  t.validate();
  CartesianState c{{0, 0, 0, 3.8, 0, 0}};
  auto v = backbone_distance_vector(t, c);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == doctest::Approx(3.8));

  // collinear equally spaced triple: pairs (0,1), (0,2), (1,2)
  Topology t3;
  t3.atoms = {{"N", "N", 1, true}, {"CA", "C", 1, true}, {"C", "C", 1, true}};
  t3.zmatrix.resize(3);
  t3.zmatrix[1] = {0, -1, -1, CoordRole::kFrozen, CoordRole::kAbsent, CoordRole::kAbsent};
  t3.zmatrix[2] = {1, 0, -1, CoordRole::kFrozen, CoordRole::kFrozen, CoordRole::kAbsent};
  t3.validate();
  CartesianState c3{{0, 0, 0, 1, 0, 0, 2, 0, 0}};
  auto v3 = backbone_distance_vector(t3, c3);
  REQUIRE(v3.size() == 3);
  CHECK(v3[0] == doctest::Approx(1.0));
  CHECK(v3[1] == doctest::Approx(2.0));
  CHECK(v3[2] == doctest::Approx(1.0));

  ToySystem sys = make_toy_chain(5);
  const std::size_t b = sys.topology.backbone_atoms().size();
  CHECK(backbone_pair_count(sys.topology) == b * (b - 1) / 2);
}

TEST_CASE("distance distortion: trivial cases and all-pairs oracle") {
  ToySystem sys = make_toy_chain(2);
  Rng rng(41);
  std::vector<CartesianState> batch;
  for (int i = 0; i < 6; ++i) {
    batch.push_back(to_cartesian(sys.topology, sys.topology.reference,
                                 random_state(sys.topology, rng)));
  }
  CHECK(distance_distortion(sys.topology, batch, batch) == doctest::Approx(0.0));

  // ensembles offset in one dihedral: paired vs exhaustive double loop
  std::vector<CartesianState> other;
  for (int i = 0; i < 6; ++i) {
    InternalState s = random_state(sys.topology, rng);
    other.push_back(to_cartesian(sys.topology, sys.topology.reference, s));
  }
  const double paired = distance_distortion(sys.topology, batch, other, false);
  CHECK(paired > 0.0);
  const double allpairs = distance_distortion(sys.topology, batch, other, true);
  double brute = 0.0;
  for (const auto& q : batch) {
    auto dq = backbone_distance_vector(sys.topology, q);
    for (const auto& p : other) {
      auto dp = backbone_distance_vector(sys.topology, p);
      double m = 0.0;
      for (std::size_t k = 0; k < dq.size(); ++k) m += std::abs(dq[k] - dp[k]);
      brute += m / static_cast<double>(dq.size());
    }
  }
  brute /= 36.0;
  CHECK(allpairs == doctest::Approx(brute).epsilon(1e-12));

  // symmetry of the paired estimator
  CHECK(distance_distortion(sys.topology, other, batch, false) ==
        doctest::Approx(paired).epsilon(1e-12));
}

TEST_CASE("single pair distance distortion value") {
  Topology t;
  t.atoms = {{"N", "N", 1, true}, {"CA", "C", 1, true}};
  t.zmatrix.resize(2);
  t.zmatrix[1] = {0, -1, -1, CoordRole::kFrozen, CoordRole::kAbsent, CoordRole::kAbsent};
  t.validate();
  std::vector<CartesianState> q{CartesianState{{0, 0, 0, 2, 0, 0}}};
  std::vector<CartesianState> p{CartesianState{{0, 0, 0, 1, 0, 0}}};
  CHECK(distance_distortion(t, q, p) == doctest::Approx(1.0));
}

TEST_CASE("rmsf: zero for identical structures, localized for one moving residue") {
  ToySystem sys = make_toy_chain(3);
  Rng rng(43);
  CartesianState base =
      to_cartesian(sys.topology, sys.topology.reference, random_state(sys.topology, rng));
  std::vector<CartesianState> same(4, base);
  for (double v : rmsf(sys.topology, same)) CHECK(v == doctest::Approx(0.0));

  // alternate +/- a displacement of one residue's CA, pre-aligned by design
  const double a = 0.4;
  const int ca1 = sys.topology.calpha_atoms()[1];
  std::vector<CartesianState> wiggle;
  for (int i = 0; i < 8; ++i) {
    CartesianState f = base;
    f.xyz[3 * static_cast<std::size_t>(ca1)] += (i % 2 == 0 ? a : -a);
    wiggle.push_back(f);
  }
  std::vector<double> r = rmsf(sys.topology, wiggle);
  CHECK(r[1] == doctest::Approx(a).epsilon(0.05));
  CHECK(r[0] < 0.1);
  CHECK(r[2] < 0.1);

  // permutation of batch order leaves the output unchanged
  std::vector<CartesianState> shuffled = {wiggle[3], wiggle[0], wiggle[7], wiggle[2],
                                          wiggle[5], wiggle[6], wiggle[1], wiggle[4]};
  std::vector<double> r2 = rmsf(sys.topology, shuffled);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(r[i] == doctest::Approx(r2[i]).epsilon(1e-10));
}

TEST_CASE("rmsd: zero under rigid motion, oracle on a 3-atom case") {
  ToySystem sys = make_toy_chain(2);
  Rng rng(47);
  CartesianState a =
      to_cartesian(sys.topology, sys.topology.reference, random_state(sys.topology, rng));
  CHECK(rmsd_aligned(a, a) == doctest::Approx(0.0));

  double rot[3][3], trans[3] = {1.0, -2.0, 0.5};
  random_rotation(rng, rot);
  CartesianState b = rigid_motion(a, rot, trans);
  CHECK(rmsd_aligned(a, b) < 1e-10);

  // rotation-grid oracle (coarse sweep + local refinement) on 3-atom configs
  CartesianState p{{0, 0, 0, 1, 0, 0, 0, 1, 0}};
  CartesianState q{{0, 0, 0, 1.1, 0, 0, 0, 0.8, 0.3}};
  const double fast = rmsd_aligned(p, q);

  auto rmsd_at = [&](double a0, double a1, double a2) {
    const double ca = std::cos(a0), sa = std::sin(a0);
    const double cb = std::cos(a1), sb = std::sin(a1);
    const double cg = std::cos(a2), sg = std::sin(a2);
    const double r[3][3] = {{ca * cb, ca * sb * sg - sa * cg, ca * sb * cg + sa * sg},
                            {sa * cb, sa * sb * sg + ca * cg, sa * sb * cg - ca * sg},
                            {-sb, cb * sg, cb * cg}};
    double cp[3] = {0, 0, 0}, cq[3] = {0, 0, 0};
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) {
        cp[k] += p.xyz[3 * static_cast<std::size_t>(i) + static_cast<std::size_t>(k)] / 3.0;
        cq[k] += q.xyz[3 * static_cast<std::size_t>(i) + static_cast<std::size_t>(k)] / 3.0;
      }
    }
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      double v[3] = {p.x(static_cast<std::size_t>(i)) - cp[0],
                     p.y(static_cast<std::size_t>(i)) - cp[1],
                     p.z(static_cast<std::size_t>(i)) - cp[2]};
      for (int rr = 0; rr < 3; ++rr) {
        const double rv = r[rr][0] * v[0] + r[rr][1] * v[1] + r[rr][2] * v[2];
        const double ref = rr == 0 ? q.x(static_cast<std::size_t>(i))
                                   : (rr == 1 ? q.y(static_cast<std::size_t>(i))
                                              : q.z(static_cast<std::size_t>(i)));
        const double d = rv - (ref - cq[rr]);
        s += d * d;
      }
    }
    return std::sqrt(s / 3.0);
  };

  double best = 1e9, ba = 0, bb = 0, bg = 0;
  const int n = 36;
  for (int ia = 0; ia < n; ++ia) {
    for (int ib = 0; ib <= n / 2; ++ib) {
      for (int ig = 0; ig < n; ++ig) {
        const double a0 = 2 * kPi * ia / n, a1 = -kPi / 2 + kPi * ib / (n / 2),
                     a2 = 2 * kPi * ig / n;
        const double v = rmsd_at(a0, a1, a2);
        if (v < best) {
          best = v;
          ba = a0;
          bb = a1;
          bg = a2;
        }
      }
    }
  }
  double step = 2 * kPi / n;
  for (int round = 0; round < 6; ++round) {
    step *= 0.2;
    for (int ia = -4; ia <= 4; ++ia) {
      for (int ib = -4; ib <= 4; ++ib) {
        for (int ig = -4; ig <= 4; ++ig) {
          const double v = rmsd_at(ba + ia * step, bb + ib * step, bg + ig * step);
          if (v < best) {
            best = v;
            ba += ia * step;
            bb += ib * step;
            bg += ig * step;
          }
        }
      }
    }
  }
  CHECK(fast <= best + 1e-9);
  CHECK(std::abs(fast - best) < 1e-3);
}
