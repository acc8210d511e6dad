// SPDX-License-Identifier: Apache-2.0
#include "bgic/base_dist.hpp"

#include <cmath>
#include <numbers>

#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"

namespace bgic {

using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

double von_mises_draw(double loc, double kappa, Rng& rng) {
  if (kappa < 1e-8) return rng.uniform(-kPi, kPi);
  // Best & Fisher wrapped-Cauchy envelope rejection.
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  while (true) {
    const double u1 = rng.uniform();
    const double z = std::cos(kPi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = rng.uniform();
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double u3 = rng.uniform();
      const double sign = u3 < 0.5 ? -1.0 : 1.0;
      return wrap_angle(loc + sign * std::acos(f));
    }
  }
}

}  // namespace

double log_bessel_i0(double kappa) {
  if (kappa < 0.0) throw NumericError("log_bessel_i0: negative concentration");
  if (kappa < 50.0) {
    // sum_k (kappa^2/4)^k / (k!)^2
    const double q = 0.25 * kappa * kappa;
    double term = 1.0, total = 1.0;
    for (int k = 1; k < 1000; ++k) {
      term *= q / (static_cast<double>(k) * static_cast<double>(k));
      total += term;
      if (term < total * 1e-17) break;
    }
    return std::log(total);
  }
  // asymptotic: I0(k) ~ e^k / sqrt(2 pi k) * (1 + 1/(8k) + 9/(128 k^2) + ...)
  const double inv = 1.0 / kappa;
  const double series = 1.0 + inv * (0.125 + inv * (0.0703125 + inv * 0.0732421875));
  return kappa - 0.5 * std::log(2.0 * kPi * kappa) + std::log(series);
}

Tensor BaseDistribution::log_prob(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != specs.size()) {
    throw NumericError("base log_prob expects (batch, dim)");
  }
  const std::size_t b = z.dim(0);
  Tensor total = Tensor::zeros({b});
  for (std::size_t j = 0; j < specs.size(); ++j) {
    Tensor v = ad::reshape(ad::slice(z, 1, j, 1), {b});
    const BaseSpec& s = specs[j];
    switch (s.kind) {
      case BaseKind::kGaussian: {
        total = total - (v * v + Tensor(kLogTwoPi)) * Tensor(0.5);
        break;
      }
      case BaseKind::kUniform: {
        total = total - Tensor(std::log(2.0 * kPi));
        break;
      }
      case BaseKind::kVonMises: {
        const double log_norm = std::log(2.0 * kPi) + log_bessel_i0(s.kappa);
        total = total + ad::cos(v - Tensor(s.loc)) * Tensor(s.kappa) - Tensor(log_norm);
        break;
      }
    }
  }
  return total;
}

double BaseDistribution::log_prob_1d(std::size_t coord, double v) const {
  const BaseSpec& s = specs.at(coord);
  switch (s.kind) {
    case BaseKind::kGaussian: return -0.5 * (v * v + kLogTwoPi);
    case BaseKind::kUniform: return -std::log(2.0 * kPi);
    case BaseKind::kVonMises:
      return s.kappa * std::cos(v - s.loc) - std::log(2.0 * kPi) - log_bessel_i0(s.kappa);
  }
  return 0.0;
}

double BaseDistribution::sample_1d(std::size_t coord, Rng& rng) const {
  const BaseSpec& s = specs.at(coord);
  switch (s.kind) {
    case BaseKind::kGaussian: return rng.normal();
    case BaseKind::kUniform: return rng.uniform(-kPi, kPi);
    case BaseKind::kVonMises: return von_mises_draw(s.loc, s.kappa, rng);
  }
  return 0.0;
}

Tensor BaseDistribution::sample(std::size_t n, Rng& rng) const {
  Tensor out = Tensor::zeros({n, specs.size()});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < specs.size(); ++j) {
      out[i * specs.size() + j] = sample_1d(j, rng);
    }
  }
  return out;
}

BaseDistribution BaseDistribution::for_layout(const CoordinateLayout& layout,
                                              BaseKind dihedral_kind, double von_mises_kappa) {
  BaseDistribution base;
  for (const CoordInfo& c : layout.coords) {
    BaseSpec s;
    if (c.kind == CoordKind::kCircular) {
      s.kind = dihedral_kind;
      s.kappa = von_mises_kappa;
    } else {
      s.kind = BaseKind::kGaussian;
    }
    base.specs.push_back(s);
  }
  return base;
}

}  // namespace bgic
