// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <utility>

#include "bgic/tape.hpp"
#include "bgic/tensor.hpp"

namespace bgic {

// Raw conditioner output per transformed coordinate: K widths, K heights,
// K+1 derivative slots (boundary handling depends on the variant).
inline constexpr std::size_t spline_param_count(std::size_t bins) { return 3 * bins + 1; }

// Knot derivatives get softplus(raw + shift) + floor so zero raw input maps
// to exactly 1 and the log-determinant stays bounded.
inline constexpr double kDerivFloor = 1e-3;

// Monotone rational-quadratic spline on [lo, hi] built from raw parameters
// of shape (batch, m, 3K+1). Widths/heights use softmax times the interval
// length; all-zero raw parameters give the identity map.
struct SplineKnots {
  ad::Tensor cum_x;    // (b,m,K+1) knot abscissae from lo to hi
  ad::Tensor cum_y;    // (b,m,K+1) knot ordinates
  ad::Tensor widths;   // (b,m,K)
  ad::Tensor heights;  // (b,m,K)
  ad::Tensor derivs;   // (b,m,K+1); bounded: endpoints pinned to 1,
                       // circular: last equals first (shared seam slope)
  std::size_t bins = 0;
  double lo = 0.0, hi = 0.0;
};

SplineKnots make_bounded_knots(const ad::Tensor& raw, std::size_t bins, double lo, double hi);
SplineKnots make_circular_knots(const ad::Tensor& raw, std::size_t bins, double lo, double hi);

// Elementwise transform of x (batch, m). Bounded variant: identity with zero
// log-det outside [lo, hi] (linear tails). Circular variant: inputs are
// wrapped into [lo, hi) first; the map is a bijection of the circle with a
// continuous derivative across the seam.
std::pair<ad::Tensor, ad::Tensor> rqs_forward(const ad::Tensor& x, const SplineKnots& knots,
                                              bool circular);
// Analytic inversion via the stable quadratic root; log-det is the negated
// forward term at the preimage.
std::pair<ad::Tensor, ad::Tensor> rqs_inverse(const ad::Tensor& y, const SplineKnots& knots,
                                              bool circular);

}  // namespace bgic
