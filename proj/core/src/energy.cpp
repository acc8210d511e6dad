// SPDX-License-Identifier: Apache-2.0
#include "bgic/energy.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bgic/errors.hpp"

namespace bgic {

using ad::Tensor;
using nlohmann::json;

void ToyForceField::validate() const {
  for (const BondTerm& b : bonds) {
    if (b.k <= 0.0 || b.d0 <= 0.0) throw ConfigError("force field: bond constants must be > 0");
    if (b.i == b.j) throw ConfigError("force field: bond on a single atom");
  }
  for (const AngleTerm& a : angles) {
    if (a.k_theta <= 0.0) throw ConfigError("force field: angle constant must be > 0");
  }
  for (const LJPair& p : lj_pairs) {
    if (p.epsilon <= 0.0 || p.sigma <= 0.0) {
      throw ConfigError("force field: LJ constants must be > 0");
    }
  }
  // The pair list must respect 1-2/1-3 exclusions implied by the bonds.
  std::set<std::pair<int, int>> bonded;
  auto key = [](int i, int j) { return std::make_pair(std::min(i, j), std::max(i, j)); };
  std::multimap<int, int> adj;
  for (const BondTerm& b : bonds) {
    bonded.insert(key(b.i, b.j));
    adj.emplace(b.i, b.j);
    adj.emplace(b.j, b.i);
  }
  std::set<std::pair<int, int>> onethree;
  for (const auto& [center, first] : adj) {
    auto range = adj.equal_range(center);
    for (auto it = range.first; it != range.second; ++it) {
      if (it->second != first) onethree.insert(key(first, it->second));
    }
  }
  for (const LJPair& p : lj_pairs) {
    if (bonded.count(key(p.i, p.j)) || onethree.count(key(p.i, p.j))) {
      throw ConfigError("force field: LJ pair violates 1-2/1-3 exclusions");
    }
  }
}

std::string ToyForceField::to_json_string() const {
  json j;
  j["format"] = "bgic-forcefield";
  j["version"] = 1;
  j["bonds"] = json::array();
  for (const BondTerm& b : bonds) {
    j["bonds"].push_back({{"atoms", {b.i, b.j}}, {"k", b.k}, {"d0", b.d0}});
  }
  j["angles"] = json::array();
  for (const AngleTerm& a : angles) {
    j["angles"].push_back({{"atoms", {a.i, a.j, a.k}}, {"k", a.k_theta}, {"theta0", a.theta0}});
  }
  j["torsions"] = json::array();
  for (const TorsionTerm& t : torsions) {
    j["torsions"].push_back({{"atoms", {t.i, t.j, t.k, t.l}},
                             {"amplitude", t.amplitude},
                             {"multiplicity", t.multiplicity},
                             {"phase", t.phase}});
  }
  j["lj_pairs"] = json::array();
  for (const LJPair& p : lj_pairs) {
    j["lj_pairs"].push_back({{"atoms", {p.i, p.j}}, {"epsilon", p.epsilon}, {"sigma", p.sigma}});
  }
  return j.dump(2) + "\n";
}

ToyForceField ToyForceField::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("force field: invalid JSON: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "bgic-forcefield") {
    throw FormatError("force field: missing or wrong format tag");
  }
  if (!j.contains("version") || j["version"].get<int>() != 1) {
    throw FormatError("force field: unsupported version");
  }
  ToyForceField ff;
  for (const auto& b : j.value("bonds", json::array())) {
    ff.bonds.push_back(
        {b.at("atoms")[0].get<int>(), b.at("atoms")[1].get<int>(), b.at("k").get<double>(),
         b.at("d0").get<double>()});
  }
  for (const auto& a : j.value("angles", json::array())) {
    ff.angles.push_back({a.at("atoms")[0].get<int>(), a.at("atoms")[1].get<int>(),
                         a.at("atoms")[2].get<int>(), a.at("k").get<double>(),
                         a.at("theta0").get<double>()});
  }
  for (const auto& t : j.value("torsions", json::array())) {
    ff.torsions.push_back({t.at("atoms")[0].get<int>(), t.at("atoms")[1].get<int>(),
                           t.at("atoms")[2].get<int>(), t.at("atoms")[3].get<int>(),
                           t.at("amplitude").get<double>(), t.at("multiplicity").get<int>(),
                           t.at("phase").get<double>()});
  }
  for (const auto& p : j.value("lj_pairs", json::array())) {
    ff.lj_pairs.push_back({p.at("atoms")[0].get<int>(), p.at("atoms")[1].get<int>(),
                           p.at("epsilon").get<double>(), p.at("sigma").get<double>()});
  }
  ff.validate();
  return ff;
}

ToyForceField ToyForceField::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open force field file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

void ToyForceField::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write force field file '" + path + "'");
  out << to_json_string();
}

// ---------------------------------------------------------------------------
// Differentiable terms

namespace {

Vec3T vsub(const Vec3T& a, const Vec3T& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3T vcross(const Vec3T& a, const Vec3T& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
Tensor vdot(const Vec3T& a, const Vec3T& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Tensor vnorm(const Vec3T& a) { return ad::sqrt(vdot(a, a)); }

Tensor angle_of(const std::vector<Vec3T>& pos, int i, int j, int k) {
  Vec3T u = vsub(pos[i], pos[j]);
  Vec3T v = vsub(pos[k], pos[j]);
  // atan2 form stays differentiable where acos saturates
  return ad::atan2(vnorm(vcross(u, v)), vdot(u, v));
}

Tensor dihedral_of(const std::vector<Vec3T>& pos, int i, int j, int k, int l) {
  Vec3T b1 = vsub(pos[j], pos[i]);
  Vec3T b2 = vsub(pos[k], pos[j]);
  Vec3T b3 = vsub(pos[l], pos[k]);
  Vec3T n1 = vcross(b1, b2);
  Vec3T n2 = vcross(b2, b3);
  Tensor nb2 = vnorm(b2);
  Vec3T b2h{b2.x / nb2, b2.y / nb2, b2.z / nb2};
  Vec3T m1 = vcross(n1, b2h);
  return ad::atan2(vdot(m1, n2), vdot(n1, n2));
}

// Cubic extrapolation coefficients for the clamped LJ core.
struct LJClamp {
  double a0, a2, a3;  // a1 = 0 (zero slope at r = 0)
};

LJClamp lj_clamp_coeffs(double epsilon, double sigma) {
  const double rc = kLJClampRadius;
  const double sr = sigma / rc;
  const double sr6 = sr * sr * sr * sr * sr * sr;
  const double sr12 = sr6 * sr6;
  const double v = 4.0 * epsilon * (sr12 - sr6);
  const double vp = 4.0 * epsilon * (-12.0 * sr12 + 6.0 * sr6) / rc;
  const double vpp = 4.0 * epsilon * (156.0 * sr12 - 42.0 * sr6) / (rc * rc);
  LJClamp c;
  c.a3 = (vpp * rc - vp) / (3.0 * rc * rc);
  c.a2 = (vp - 3.0 * c.a3 * rc * rc) / (2.0 * rc);
  c.a0 = v - c.a2 * rc * rc - c.a3 * rc * rc * rc;
  return c;
}

}  // namespace

Tensor potential_energy(const ToyForceField& ff, const std::vector<Vec3T>& positions) {
  const std::size_t batch = positions.at(0).x.size();
  Tensor total = Tensor::zeros({batch});

  for (const BondTerm& b : ff.bonds) {
    Tensor d = vnorm(vsub(positions[b.i], positions[b.j]));
    Tensor delta = d - Tensor(b.d0);
    total = total + delta * delta * Tensor(b.k);
  }
  for (const AngleTerm& a : ff.angles) {
    Tensor theta = angle_of(positions, a.i, a.j, a.k);
    Tensor delta = theta - Tensor(a.theta0);
    total = total + delta * delta * Tensor(a.k_theta);
  }
  for (const TorsionTerm& t : ff.torsions) {
    Tensor phi = dihedral_of(positions, t.i, t.j, t.k, t.l);
    Tensor arg = phi * Tensor(static_cast<double>(t.multiplicity)) - Tensor(t.phase);
    total = total + (ad::cos(arg) + Tensor(1.0)) * Tensor(t.amplitude);
  }
  for (const LJPair& p : ff.lj_pairs) {
    Tensor r = vnorm(vsub(positions[p.i], positions[p.j]));
    Tensor inside = ad::mask_lt(r, kLJClampRadius);
    // Evaluate the 1/r powers on a clamped radius so the unselected branch
    // cannot poison gradients with infinities.
    Tensor r_eff = ad::where(inside, Tensor(kLJClampRadius), r);
    Tensor sr = Tensor(p.sigma) / r_eff;
    Tensor sr2 = sr * sr;
    Tensor sr6 = sr2 * sr2 * sr2;
    Tensor lj = (sr6 * sr6 - sr6) * Tensor(4.0 * p.epsilon);
    const LJClamp c = lj_clamp_coeffs(p.epsilon, p.sigma);
    Tensor r2 = r * r;
    Tensor cubic = Tensor(c.a0) + r2 * Tensor(c.a2) + r2 * r * Tensor(c.a3);
    total = total + ad::where(inside, cubic, lj);
  }
  return total;
}

double potential_energy(const ToyForceField& ff, const CartesianState& cart) {
  const std::size_t n = cart.atom_count();
  std::vector<Vec3T> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = {Tensor({1}, {cart.x(i)}), Tensor({1}, {cart.y(i)}), Tensor({1}, {cart.z(i)})};
  }
  return potential_energy(ff, pos)[0];
}

double EnergyModel::reduced_energy_value(const std::vector<double>& x) const {
  Tensor t({1, x.size()}, x);
  return reduced_energy(t)[0];
}

// ---------------------------------------------------------------------------

ChainTarget::ChainTarget(const Topology& top, const ToyForceField& ff, double temperature)
    : top_(&top), ff_(&ff) {
  target_.forcefield = &ff;
  target_.temperature = temperature;
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
}

std::size_t ChainTarget::dim() const { return top_->free_count(); }

Tensor ChainTarget::reduced_energy(const Tensor& x) const {
  std::vector<Vec3T> pos = reconstruct_positions(*top_, top_->reference, x);
  return potential_energy(*ff_, pos) / Tensor(target_.kT());
}

Tensor DoubleWellTarget::reduced_energy(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != 2) throw NumericError("double well expects (batch, 2)");
  const std::size_t batch = x.dim(0);
  Tensor x1 = ad::reshape(ad::slice(x, 1, 0, 1), {batch});
  Tensor x2 = ad::reshape(ad::slice(x, 1, 1, 1), {batch});
  Tensor q = x1 * x1 - Tensor(1.0);
  return q * q * Tensor(a_) + x2 * x2 * Tensor(b_);
}

double DoubleWellTarget::unnormalized_log_density(double x1, double x2) const {
  const double q = x1 * x1 - 1.0;
  return -(a_ * q * q + b_ * x2 * x2);
}

double DoubleWellTarget::quadrature_normalizer(double span, std::size_t points) const {
  // Trapezoid product rule; the integrand decays fast enough that the box
  // truncation dominates the error.
  const double h = 2.0 * span / static_cast<double>(points - 1);
  double z = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    const double x1 = -span + h * static_cast<double>(i);
    const double wi = (i == 0 || i + 1 == points) ? 0.5 : 1.0;
    double row = 0.0;
    for (std::size_t j = 0; j < points; ++j) {
      const double x2 = -span + h * static_cast<double>(j);
      const double wj = (j == 0 || j + 1 == points) ? 0.5 : 1.0;
      row += wj * std::exp(unnormalized_log_density(x1, x2));
    }
    z += wi * row;
  }
  return z * h * h;
}

}  // namespace bgic
