// SPDX-License-Identifier: Apache-2.0
#include "bgic/spline.hpp"

#include <cmath>

#include "bgic/errors.hpp"

namespace bgic {

using ad::Shape;
using ad::Tensor;

namespace {

// softplus(kDerivShift) + kDerivFloor == 1 exactly
const double kDerivShift = std::log(std::expm1(1.0 - kDerivFloor));

Tensor deriv_map(const Tensor& raw) {
  return ad::softplus(raw + Tensor(kDerivShift)) + Tensor(kDerivFloor);
}

// Prepends lo to the inclusive cumulative sum: (b,m,K) -> (b,m,K+1).
Tensor knot_positions(const Tensor& sizes, double lo) {
  const std::size_t b = sizes.dim(0), m = sizes.dim(1);
  Tensor zero = Tensor::full({b, m, 1}, 0.0);
  Tensor cums = ad::cumsum(sizes);
  return ad::concat({zero, cums}, 2) + Tensor(lo);
}

void check_raw(const Tensor& raw, std::size_t bins) {
  if (raw.rank() != 3 || raw.dim(2) != spline_param_count(bins)) {
    throw NumericError("spline: raw parameter tensor has wrong shape");
  }
  raw.check_finite("spline raw parameters");
}

}  // namespace

SplineKnots make_bounded_knots(const Tensor& raw, std::size_t bins, double lo, double hi) {
  check_raw(raw, bins);
  if (!(hi > lo)) throw NumericError("spline: empty interval");
  const std::size_t b = raw.dim(0), m = raw.dim(1);
  const double span = hi - lo;

  Tensor widths = ad::softmax_lastaxis(ad::slice(raw, 2, 0, bins)) * Tensor(span);
  Tensor heights = ad::softmax_lastaxis(ad::slice(raw, 2, bins, bins)) * Tensor(span);
  // interior derivatives only; boundary slopes pinned to 1 to blend with the
  // identity tails
  Tensor ones = Tensor::full({b, m, 1}, 1.0);
  Tensor derivs =
      bins >= 2
          ? ad::concat({ones, deriv_map(ad::slice(raw, 2, 2 * bins, bins - 1)), ones}, 2)
          : ad::concat({ones, ones}, 2);

  SplineKnots k;
  k.cum_x = knot_positions(widths, lo);
  k.cum_y = knot_positions(heights, lo);
  k.widths = widths;
  k.heights = heights;
  k.derivs = derivs;
  k.bins = bins;
  k.lo = lo;
  k.hi = hi;
  return k;
}

SplineKnots make_circular_knots(const Tensor& raw, std::size_t bins, double lo, double hi) {
  check_raw(raw, bins);
  const std::size_t b = raw.dim(0), m = raw.dim(1);
  const double span = hi - lo;

  Tensor widths = ad::softmax_lastaxis(ad::slice(raw, 2, 0, bins)) * Tensor(span);
  Tensor heights = ad::softmax_lastaxis(ad::slice(raw, 2, bins, bins)) * Tensor(span);
  // one derivative per knot with the seam slope shared between both ends
  Tensor interior = deriv_map(ad::slice(raw, 2, 2 * bins, bins));
  Tensor seam = ad::slice(interior, 2, 0, 1);
  Tensor derivs = ad::concat({interior, seam}, 2);

  SplineKnots k;
  k.cum_x = knot_positions(widths, lo);
  k.cum_y = knot_positions(heights, lo);
  k.widths = widths;
  k.heights = heights;
  k.derivs = derivs;
  k.bins = bins;
  k.lo = lo;
  k.hi = hi;
  (void)b;
  (void)m;
  return k;
}

namespace {

struct BinSelect {
  Tensor w, cw, h, ch, d0, d1;
};

// Per-element bin parameters chosen by searching the knot grid values.
BinSelect select_bins(const SplineKnots& k, const Tensor& coord, bool by_y) {
  const std::size_t b = coord.dim(0), m = coord.dim(1);
  const std::size_t K = k.bins;
  const Tensor& grid = by_y ? k.cum_y : k.cum_x;

  std::vector<std::size_t> bin_idx(b * m, 0);
  for (std::size_t e = 0; e < b * m; ++e) {
    const double v = coord[e];
    // grid row for this element: K+1 ascending knots
    const double* row = grid.raw() + e * (K + 1);
    std::size_t idx = 0;
    while (idx + 1 < K && row[idx + 1] <= v) ++idx;
    bin_idx[e] = idx;
  }

  auto take = [&](const Tensor& src, std::size_t stride, std::size_t offset) {
    std::vector<std::size_t> flat(b * m);
    for (std::size_t e = 0; e < b * m; ++e) flat[e] = e * stride + bin_idx[e] + offset;
    return ad::gather(src, flat, {b, m});
  };

  BinSelect s;
  s.w = take(k.widths, K, 0);
  s.h = take(k.heights, K, 0);
  s.cw = take(k.cum_x, K + 1, 0);
  s.ch = take(k.cum_y, K + 1, 0);
  s.d0 = take(k.derivs, K + 1, 0);
  s.d1 = take(k.derivs, K + 1, 1);
  return s;
}

Tensor detached_wrap_offset(const Tensor& x, double lo, double hi) {
  const double span = hi - lo;
  Tensor off = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    off[i] = span * std::floor((x[i] - lo) / span);
  }
  return off;
}

}  // namespace

std::pair<Tensor, Tensor> rqs_forward(const Tensor& x, const SplineKnots& k, bool circular) {
  if (x.rank() != 2) throw NumericError("rqs_forward expects (batch, m)");
  x.check_finite("spline input");

  Tensor x_in = x;
  Tensor outside;
  if (circular) {
    // shift by whole periods (constant per element, so gradients pass through)
    x_in = x - detached_wrap_offset(x, k.lo, k.hi);
  } else {
    outside = ad::Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      outside[i] = (x[i] < k.lo || x[i] > k.hi) ? 1.0 : 0.0;
    }
    // park outside elements mid-interval so the bin math stays finite
    x_in = ad::where(outside, Tensor(0.5 * (k.lo + k.hi)), x);
  }

  BinSelect s = select_bins(k, x_in.detached(), /*by_y=*/false);
  Tensor xi = (x_in - s.cw) / s.w;
  Tensor sl = s.h / s.w;
  Tensor xi1 = Tensor(1.0) - xi;
  Tensor q = xi * xi1;
  Tensor denom = sl + (s.d1 + s.d0 - sl - sl) * q;
  Tensor y = s.ch + s.h * (sl * xi * xi + s.d0 * q) / denom;
  Tensor num = sl * sl * (s.d1 * xi * xi + (sl + sl) * q + s.d0 * xi1 * xi1);
  Tensor logdet = ad::log(num) - ad::log(denom * denom);

  if (!circular) {
    y = ad::where(outside, x, y);
    logdet = ad::where(outside, Tensor(0.0), logdet);
  }
  return {y, logdet};
}

std::pair<Tensor, Tensor> rqs_inverse(const Tensor& y, const SplineKnots& k, bool circular) {
  if (y.rank() != 2) throw NumericError("rqs_inverse expects (batch, m)");
  y.check_finite("spline input");

  Tensor y_in = y;
  Tensor outside;
  if (circular) {
    y_in = y - detached_wrap_offset(y, k.lo, k.hi);
  } else {
    outside = ad::Tensor::zeros(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
      outside[i] = (y[i] < k.lo || y[i] > k.hi) ? 1.0 : 0.0;
    }
    y_in = ad::where(outside, Tensor(0.5 * (k.lo + k.hi)), y);
  }

  BinSelect s = select_bins(k, y_in.detached(), /*by_y=*/true);
  Tensor sl = s.h / s.w;
  Tensor dy = y_in - s.ch;
  Tensor mix = s.d1 + s.d0 - sl - sl;
  Tensor a = s.h * (sl - s.d0) + dy * mix;
  Tensor b = s.h * s.d0 - dy * mix;
  Tensor c = ad::neg(sl * dy);
  Tensor disc = b * b - Tensor(4.0) * a * c;
  // clamp roundoff negatives
  disc = ad::where(ad::mask_lt(disc, 0.0), Tensor(0.0), disc);
  Tensor xi = (c + c) / (ad::neg(b) - ad::sqrt(disc));
  Tensor x = xi * s.w + s.cw;

  Tensor xi1 = Tensor(1.0) - xi;
  Tensor q = xi * xi1;
  Tensor denom = sl + mix * q;
  Tensor num = sl * sl * (s.d1 * xi * xi + (sl + sl) * q + s.d0 * xi1 * xi1);
  Tensor logdet = ad::log(denom * denom) - ad::log(num);

  if (!circular) {
    x = ad::where(outside, y, x);
    logdet = ad::where(outside, Tensor(0.0), logdet);
  }
  return {x, logdet};
}

}  // namespace bgic
