// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bgic/geometry.hpp"
#include "bgic/tensor.hpp"
#include "bgic/topology.hpp"

namespace bgic {

// Boltzmann constant in kcal/mol/K.
inline constexpr double kBoltzmann = 0.0019872041;

struct BondTerm {
  int i, j;
  double k;   // kcal/mol/A^2; energy k*(d-d0)^2
  double d0;  // A
};

struct AngleTerm {
  int i, j, k;  // angle at j
  double k_theta;
  double theta0;
};

// amplitude * (1 + cos(multiplicity*phi - phase)); several terms may share
// the same quadruple to form a cosine series.
struct TorsionTerm {
  int i, j, k, l;
  double amplitude;
  int multiplicity;
  double phase;
};

struct LJPair {
  int i, j;
  double epsilon, sigma;
};

// Harmonic bond/angle terms, torsion cosine series, Lennard-Jones pairs with
// 1-2/1-3 exclusions already applied to the pair list.
class ToyForceField {
 public:
  std::vector<BondTerm> bonds;
  std::vector<AngleTerm> angles;
  std::vector<TorsionTerm> torsions;
  std::vector<LJPair> lj_pairs;

  // Positive constants, LJ list consistent with the bond graph (no 1-2/1-3
  // pairs). Throws ConfigError.
  void validate() const;

  std::string to_json_string() const;
  static ToyForceField from_json_string(const std::string& text);
  static ToyForceField load(const std::string& path);
  void save(const std::string& path) const;
};

// Below this separation the LJ term switches to a cubic extrapolation that
// matches value, slope and curvature at the cutoff and has zero slope at
// r = 0, keeping energies and gradients finite through hard clashes.
inline constexpr double kLJClampRadius = 0.1;

// Total potential over batched positions, kcal/mol, shape (batch,).
ad::Tensor potential_energy(const ToyForceField& ff, const std::vector<Vec3T>& positions);
double potential_energy(const ToyForceField& ff, const CartesianState& cart);

struct BoltzmannTarget {
  const ToyForceField* forcefield = nullptr;
  double temperature = 300.0;  // K

  double kT() const { return kBoltzmann * temperature; }
};

// Dimensionless reduced energy u(x)/kT as a function of a coordinate batch
// (batch, dim). Implementations must be differentiable through x.
class EnergyModel {
 public:
  virtual ~EnergyModel() = default;
  virtual std::size_t dim() const = 0;
  virtual ad::Tensor reduced_energy(const ad::Tensor& x) const = 0;

  double reduced_energy_value(const std::vector<double>& x) const;
};

// u(reduced coords)/kT through differentiable reconstruction of the chain.
class ChainTarget : public EnergyModel {
 public:
  ChainTarget(const Topology& top, const ToyForceField& ff, double temperature);

  std::size_t dim() const override;
  ad::Tensor reduced_energy(const ad::Tensor& x) const override;

  const Topology& topology() const { return *top_; }
  const ToyForceField& forcefield() const { return *ff_; }
  double kT() const { return target_.kT(); }

 private:
  const Topology* top_;
  const ToyForceField* ff_;
  BoltzmannTarget target_;
};

// Two-dimensional sanity target: log p(x) = -(a*(x1^2-1)^2 + b*x2^2),
// treated as a reduced energy directly.
class DoubleWellTarget : public EnergyModel {
 public:
  explicit DoubleWellTarget(double a = 2.0, double b = 0.5) : a_(a), b_(b) {}

  std::size_t dim() const override { return 2; }
  ad::Tensor reduced_energy(const ad::Tensor& x) const override;

  double unnormalized_log_density(double x1, double x2) const;
  // Normalizer by 2-D quadrature over [-span,span]^2.
  double quadrature_normalizer(double span = 8.0, std::size_t points = 2001) const;

 private:
  double a_, b_;
};

}  // namespace bgic
