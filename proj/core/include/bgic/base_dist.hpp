// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "bgic/coords.hpp"
#include "bgic/rng.hpp"
#include "bgic/tensor.hpp"

namespace bgic {

enum class BaseKind {
  kGaussian,  // standard normal
  kUniform,   // [-pi, pi)
  kVonMises,  // loc, concentration kappa
};

struct BaseSpec {
  BaseKind kind = BaseKind::kGaussian;
  double loc = 0.0;
  double kappa = 1.0;
};

// log I0(kappa), series for moderate kappa, asymptotic beyond; relative
// accuracy better than 1e-12 across the range used here.
double log_bessel_i0(double kappa);

// Independent per-coordinate base over the flow's normalized space.
class BaseDistribution {
 public:
  std::vector<BaseSpec> specs;

  std::size_t dim() const { return specs.size(); }

  ad::Tensor log_prob(const ad::Tensor& z) const;  // (b,d) -> (b,)
  ad::Tensor sample(std::size_t n, Rng& rng) const;

  double log_prob_1d(std::size_t coord, double v) const;
  double sample_1d(std::size_t coord, Rng& rng) const;

  // Gaussian for bounded/linear coordinates; `dihedral` kind for circular.
  static BaseDistribution for_layout(const CoordinateLayout& layout, BaseKind dihedral_kind,
                                     double von_mises_kappa = 1.0);
};

}  // namespace bgic
