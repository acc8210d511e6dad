// SPDX-License-Identifier: Apache-2.0
#include "bgic/geometry.hpp"

#include <cmath>
#include <numbers>

#include "bgic/errors.hpp"

namespace bgic {

using ad::Shape;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

struct V3 {
  double x, y, z;
};

V3 operator-(const V3& a, const V3& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
V3 cross(const V3& a, const V3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double dot(const V3& a, const V3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(const V3& a) { return std::sqrt(dot(a, a)); }

V3 at(const CartesianState& c, int i) { return {c.x(i), c.y(i), c.z(i)}; }

}  // namespace

double wrap_angle(double phi) {
  if (phi >= -kPi && phi < kPi) return phi;  // bit-exact for in-range values
  double w = std::fmod(phi + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  return w - kPi;
}

std::vector<double> InternalState::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  out.insert(out.end(), backbone_angles.begin(), backbone_angles.end());
  out.insert(out.end(), backbone_dihedrals.begin(), backbone_dihedrals.end());
  out.insert(out.end(), sidechain_dihedrals.begin(), sidechain_dihedrals.end());
  return out;
}

InternalState InternalState::unflatten(const Topology& top, const std::vector<double>& flat) {
  const std::size_t na = top.count_role(CoordRole::kBackboneAngle);
  const std::size_t nb = top.count_role(CoordRole::kBackboneDihedral);
  const std::size_t ns = top.count_role(CoordRole::kSidechainDihedral);
  if (flat.size() != na + nb + ns) {
    throw NumericError("internal state length does not match topology roles");
  }
  InternalState s;
  s.backbone_angles.assign(flat.begin(), flat.begin() + na);
  s.backbone_dihedrals.assign(flat.begin() + na, flat.begin() + na + nb);
  s.sidechain_dihedrals.assign(flat.begin() + na + nb, flat.end());
  return s;
}

double bond_angle(const CartesianState& c, int i, int j, int k) {
  const V3 u = at(c, i) - at(c, j);
  const V3 v = at(c, k) - at(c, j);
  const double nu = norm(u), nv = norm(v);
  if (nu < 1e-12 || nv < 1e-12) throw NumericError("bond angle over coincident atoms");
  double ca = dot(u, v) / (nu * nv);
  ca = std::max(-1.0, std::min(1.0, ca));
  return std::acos(ca);
}

double dihedral_angle(const CartesianState& c, int i, int j, int k, int l) {
  const V3 b1 = at(c, j) - at(c, i);
  const V3 b2 = at(c, k) - at(c, j);
  const V3 b3 = at(c, l) - at(c, k);
  const V3 n1 = cross(b1, b2);
  const V3 n2 = cross(b2, b3);
  const double nb2 = norm(b2);
  if (norm(n1) < 1e-12 || norm(n2) < 1e-12 || nb2 < 1e-12) {
    throw NumericError("dihedral over a collinear reference triple (degenerate geometry)");
  }
  const V3 b2h{b2.x / nb2, b2.y / nb2, b2.z / nb2};
  const V3 m1 = cross(n1, b2h);
  return std::atan2(dot(m1, n2), dot(n1, n2));
}

InternalRecord cartesian_to_internal(const Topology& top, const CartesianState& cart) {
  const std::size_t n = top.atom_count();
  if (cart.atom_count() != n) throw NumericError("atom count mismatch");
  InternalRecord rec;
  rec.d.assign(n, 0.0);
  rec.theta.assign(n, 0.0);
  rec.phi.assign(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    const ZRow& row = top.zmatrix[i];
    const double d = norm(at(cart, static_cast<int>(i)) - at(cart, row.a1));
    if (d < 1e-12) throw NumericError("coincident bonded atoms");
    rec.d[i] = d;
    if (i >= 2) rec.theta[i] = bond_angle(cart, static_cast<int>(i), row.a1, row.a2);
    if (i >= 3) {
      rec.phi[i] = dihedral_angle(cart, static_cast<int>(i), row.a1, row.a2, row.a3);
    }
  }
  return rec;
}

InternalState reduce(const Topology& top, const InternalRecord& record) {
  InternalState s;
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    const ZRow& row = top.zmatrix[i];
    if (row.theta_role == CoordRole::kBackboneAngle) s.backbone_angles.push_back(record.theta[i]);
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    const ZRow& row = top.zmatrix[i];
    if (row.phi_role == CoordRole::kBackboneDihedral) {
      s.backbone_dihedrals.push_back(wrap_angle(record.phi[i]));
    }
  }
  for (std::size_t i = 0; i < top.atom_count(); ++i) {
    const ZRow& row = top.zmatrix[i];
    if (row.phi_role == CoordRole::kSidechainDihedral) {
      s.sidechain_dihedrals.push_back(wrap_angle(record.phi[i]));
    }
  }
  return s;
}

InternalRecord expand(const Topology& top, const ReferenceGeometry& ref,
                      const InternalState& state) {
  const std::size_t n = top.atom_count();
  if (ref.empty()) throw NumericError("expand: reference geometry is empty");
  InternalRecord rec;
  rec.d.assign(n, 0.0);
  rec.theta.assign(n, 0.0);
  rec.phi.assign(n, 0.0);
  std::size_t ia = 0, ib = 0, is = 0;
  for (std::size_t i = 1; i < n; ++i) {
    const ZRow& row = top.zmatrix[i];
    rec.d[i] = ref.d[i];
    if (i >= 2) {
      rec.theta[i] = row.theta_role == CoordRole::kBackboneAngle
                         ? state.backbone_angles.at(ia++)
                         : ref.theta[i];
    }
    if (i >= 3) {
      switch (row.phi_role) {
        case CoordRole::kBackboneDihedral: rec.phi[i] = state.backbone_dihedrals.at(ib++); break;
        case CoordRole::kSidechainDihedral:
          rec.phi[i] = state.sidechain_dihedrals.at(is++);
          break;
        default: rec.phi[i] = ref.phi[i]; break;
      }
    }
  }
  if (ia != state.backbone_angles.size() || ib != state.backbone_dihedrals.size() ||
      is != state.sidechain_dihedrals.size()) {
    throw NumericError("expand: role count mismatch");
  }
  return rec;
}

ReferenceGeometry fit_reference(const Topology& top, const std::vector<CartesianState>& frames) {
  if (frames.empty()) throw NumericError("fit_reference: empty frame set");
  const std::size_t n = top.atom_count();
  ReferenceGeometry ref;
  ref.d.assign(n, 0.0);
  ref.theta.assign(n, 0.0);
  ref.phi.assign(n, 0.0);
  std::vector<double> sin_sum(n, 0.0), cos_sum(n, 0.0);
  for (const CartesianState& f : frames) {
    InternalRecord rec = cartesian_to_internal(top, f);
    for (std::size_t i = 0; i < n; ++i) {
      ref.d[i] += rec.d[i];
      ref.theta[i] += rec.theta[i];
      sin_sum[i] += std::sin(rec.phi[i]);
      cos_sum[i] += std::cos(rec.phi[i]);
    }
  }
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < n; ++i) {
    ref.d[i] *= inv;
    ref.theta[i] *= inv;
    ref.phi[i] = i >= 3 ? std::atan2(sin_sum[i], cos_sum[i]) : 0.0;
  }
  ref.d[0] = 1.0;  // placeholder for the unused root slot
  return ref;
}

// ---------------------------------------------------------------------------
// Differentiable reconstruction

namespace {

using ad::broadcast_to;
using ad::concat;
using ad::reshape;
using ad::slice;

Vec3T vsub(const Vec3T& a, const Vec3T& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3T vadd(const Vec3T& a, const Vec3T& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3T vscale(const Vec3T& a, const Tensor& s) { return {a.x * s, a.y * s, a.z * s}; }
Vec3T vcross(const Vec3T& a, const Vec3T& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Tensor vdot(const Vec3T& a, const Vec3T& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3T vnormalize(const Vec3T& a) {
  Tensor n = ad::sqrt(vdot(a, a));
  return {a.x / n, a.y / n, a.z / n};
}

Tensor column(const Tensor& m, std::size_t j) {
  const std::size_t batch = m.dim(0);
  return reshape(slice(m, 1, j, 1), {batch});
}

}  // namespace

std::vector<Vec3T> reconstruct_positions(const Topology& top, const ReferenceGeometry& ref,
                                         const Tensor& reduced) {
  const std::size_t n = top.atom_count();
  if (ref.empty()) throw NumericError("reconstruct: reference geometry is empty");
  if (reduced.rank() != 2 || reduced.dim(1) != top.free_count()) {
    throw NumericError("reconstruct: reduced coordinates have wrong shape");
  }
  const std::size_t batch = reduced.dim(0);

  for (std::size_t i = 2; i < n; ++i) {
    if (top.zmatrix[i].theta_role == CoordRole::kFrozen &&
        (ref.theta[i] == 0.0 || ref.theta[i] == kPi)) {
      throw NumericError("reconstruct: reference bond angle exactly 0 or pi (degenerate frame)");
    }
  }

  // Column index in the canonical [angles | backbone dihedrals | side-chain
  // dihedrals] layout for every free coordinate.
  const std::size_t na = top.count_role(CoordRole::kBackboneAngle);
  const std::size_t nb = top.count_role(CoordRole::kBackboneDihedral);
  std::vector<int> theta_col(n, -1), phi_col(n, -1);
  {
    std::size_t ia = 0, ib = 0, is = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const ZRow& row = top.zmatrix[i];
      if (row.theta_role == CoordRole::kBackboneAngle) {
        theta_col[i] = static_cast<int>(ia++);
      }
      if (row.phi_role == CoordRole::kBackboneDihedral) {
        phi_col[i] = static_cast<int>(na + ib++);
      } else if (row.phi_role == CoordRole::kSidechainDihedral) {
        phi_col[i] = static_cast<int>(na + nb + is++);
      }
    }
  }

  auto const_batch = [&](double v) { return Tensor::full({batch}, v); };

  std::vector<Vec3T> pos;
  pos.reserve(n);
  // Atom 0 anchors the frame at the origin.
  pos.push_back({const_batch(0.0), const_batch(0.0), const_batch(0.0)});

  for (std::size_t i = 1; i < n; ++i) {
    const ZRow& row = top.zmatrix[i];
    Tensor d = const_batch(ref.d[i]);
    if (i == 1) {
      pos.push_back({pos[row.a1].x + d, const_batch(0.0), const_batch(0.0)});
      continue;
    }
    Tensor theta = theta_col[i] >= 0 ? column(reduced, static_cast<std::size_t>(theta_col[i]))
                                     : const_batch(ref.theta[i]);
    if (i == 2) {
      // In-plane placement: rotate the a1->a2 direction by theta within xy.
      const Vec3T& p1 = pos[row.a1];
      const Vec3T& p2 = pos[row.a2];
      Vec3T u = vnormalize(vsub(p2, p1));
      Tensor ct = ad::cos(theta), st = ad::sin(theta);
      Vec3T v{u.x * ct, u.y * ct + st, u.z * ct};
      pos.push_back(vadd(p1, vscale(v, d)));
      continue;
    }
    Tensor phi = phi_col[i] >= 0 ? column(reduced, static_cast<std::size_t>(phi_col[i]))
                                 : const_batch(ref.phi[i]);

    // Natural-extension frame at a1 built from (a3, a2, a1).
    const Vec3T& c = pos[row.a1];
    const Vec3T& b = pos[row.a2];
    const Vec3T& a = pos[row.a3];
    Vec3T bc = vnormalize(vsub(c, b));
    Vec3T nrm = vnormalize(vcross(vsub(b, a), bc));
    Vec3T m2 = vcross(nrm, bc);

    // Local frame components; the torsion handedness matches the measured
    // dihedral convention (verified by the round-trip property tests).
    Tensor ct = ad::cos(theta), st = ad::sin(theta);
    Tensor cp = ad::cos(phi), sp = ad::sin(phi);
    Tensor lx = ad::neg(d * ct);
    Tensor ly = d * st * cp;
    Tensor lz = ad::neg(d * st * sp);

    Vec3T placed = vadd(c, vadd(vscale(bc, lx), vadd(vscale(m2, ly), vscale(nrm, lz))));
    pos.push_back(placed);
  }
  return pos;
}

ad::Tensor backbone_distances(const Topology& top, const std::vector<Vec3T>& positions) {
  const std::vector<int> bb = top.backbone_atoms();
  const std::size_t batch = positions.at(0).x.size();
  std::vector<Tensor> entries;
  entries.reserve(bb.size() * (bb.size() - 1) / 2);
  for (std::size_t i = 0; i < bb.size(); ++i) {
    for (std::size_t j = i + 1; j < bb.size(); ++j) {
      Vec3T dvec = vsub(positions[bb[i]], positions[bb[j]]);
      Tensor dist = ad::sqrt(vdot(dvec, dvec));
      entries.push_back(reshape(dist, {batch, 1}));
    }
  }
  if (entries.empty()) return Tensor::zeros({batch, 0});
  return concat(entries, 1);
}

std::size_t backbone_pair_count(const Topology& top) {
  const std::size_t b = top.backbone_atoms().size();
  return b * (b - 1) / 2;
}

CartesianState to_cartesian(const Topology& top, const ReferenceGeometry& ref,
                            const InternalState& state) {
  std::vector<double> flat = state.flatten();
  Tensor reduced({1, flat.size()}, flat);
  std::vector<Vec3T> pos = reconstruct_positions(top, ref, reduced);
  CartesianState cart;
  cart.xyz.resize(3 * pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    cart.xyz[3 * i] = pos[i].x[0];
    cart.xyz[3 * i + 1] = pos[i].y[0];
    cart.xyz[3 * i + 2] = pos[i].z[0];
  }
  return cart;
}

std::vector<CartesianState> to_cartesian_batch(const Topology& top, const ReferenceGeometry& ref,
                                               const std::vector<std::vector<double>>& reduced) {
  std::vector<CartesianState> out;
  if (reduced.empty()) return out;
  const std::size_t batch = reduced.size();
  const std::size_t width = reduced[0].size();
  std::vector<double> flat;
  flat.reserve(batch * width);
  for (const auto& frame : reduced) {
    if (frame.size() != width) throw NumericError("batch frames have uneven widths");
    flat.insert(flat.end(), frame.begin(), frame.end());
  }
  std::vector<Vec3T> pos = reconstruct_positions(top, ref, Tensor({batch, width}, flat));
  out.resize(batch);
  for (std::size_t f = 0; f < batch; ++f) out[f].xyz.resize(3 * pos.size());
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (std::size_t f = 0; f < batch; ++f) {
      out[f].xyz[3 * i] = pos[i].x[f];
      out[f].xyz[3 * i + 1] = pos[i].y[f];
      out[f].xyz[3 * i + 2] = pos[i].z[f];
    }
  }
  return out;
}

std::vector<double> backbone_distance_vector(const Topology& top, const CartesianState& cart) {
  const std::vector<int> bb = top.backbone_atoms();
  std::vector<double> out;
  out.reserve(bb.size() * (bb.size() - 1) / 2);
  for (std::size_t i = 0; i < bb.size(); ++i) {
    for (std::size_t j = i + 1; j < bb.size(); ++j) {
      out.push_back(norm(at(cart, bb[i]) - at(cart, bb[j])));
    }
  }
  return out;
}

}  // namespace bgic
