// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bgic/base_dist.hpp"
#include "bgic/errors.hpp"
#include "bgic/rng.hpp"
#include "bgic/spline.hpp"
#include "test_util.hpp"

using namespace bgic;
using ad::Tensor;

namespace {

constexpr double kPi = std::numbers::pi;

Tensor random_raw(std::size_t b, std::size_t m, std::size_t bins, Rng& rng, double scale = 1.0) {
  Tensor raw = Tensor::zeros({b, m, spline_param_count(bins)});
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = scale * rng.normal();
  return raw;
}

double spline_deriv_fd(const SplineKnots& k, bool circular, double x, double h = 1e-6) {
  auto eval = [&](double v) {
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {v}), k, circular);
    (void)ld;
    return y[0];
  };
  return (eval(x + h) - eval(x - h)) / (2.0 * h);
}

}  // namespace

TEST_CASE("identity spline: zero raw parameters give y = x with zero logdet") {
  const std::size_t bins = 8;
  Tensor raw = Tensor::zeros({1, 1, spline_param_count(bins)});
  SplineKnots kb = make_bounded_knots(raw, bins, -1.0, 1.0);
  SplineKnots kc = make_circular_knots(raw, bins, -kPi, kPi);
  for (double x : {-0.99, -0.5, 0.0, 0.3, 0.97}) {
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {x}), kb, false);
    CHECK(y[0] == doctest::Approx(x).epsilon(1e-14));
    CHECK(std::abs(ld[0]) < 1e-12);
  }
  for (double x : {-3.0, -1.0, 0.0, 2.5}) {
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {x}), kc, true);
    CHECK(y[0] == doctest::Approx(x).epsilon(1e-12));
    CHECK(std::abs(ld[0]) < 1e-12);
  }
}

TEST_CASE("interior knots map to knots") {
  Rng rng(7);
  const std::size_t bins = 8;
  Tensor raw = random_raw(1, 1, bins, rng);
  SplineKnots k = make_bounded_knots(raw, bins, -1.0, 1.0);
  for (std::size_t j = 1; j < bins; ++j) {
    const double xk = k.cum_x[j];
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {xk}), k, false);
    (void)ld;
    CHECK(y[0] == doctest::Approx(k.cum_y[j]).epsilon(1e-10));
  }
}

TEST_CASE("spline derivative matches finite differences") {
  Rng rng(11);
  const std::size_t bins = 8;
  for (int rep = 0; rep < 20; ++rep) {
    Tensor raw = random_raw(1, 1, bins, rng);
    const bool circular = rep % 2 == 1;
    SplineKnots k = circular ? make_circular_knots(raw, bins, -kPi, kPi)
                             : make_bounded_knots(raw, bins, -1.0, 1.0);
    const double x = circular ? rng.uniform(-kPi + 0.01, kPi - 0.01) : rng.uniform(-0.95, 0.95);
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {x}), k, circular);
    (void)y;
    const double analytic = std::exp(ld[0]);
    const double fd = spline_deriv_fd(k, circular, x);
    CHECK(std::abs(analytic - fd) / (std::abs(analytic) + 1e-8) < 1e-5);
  }
}

TEST_CASE("tails: identity with zero logdet outside the interval") {
  Rng rng(13);
  SplineKnots k = make_bounded_knots(random_raw(1, 1, 8, rng), 8, -1.0, 1.0);
  for (double x : {-7.3, -1.2, 1.01, 4.0}) {
    auto [y, ld] = rqs_forward(Tensor({1, 1}, {x}), k, false);
    CHECK(y[0] == x);
    CHECK(ld[0] == 0.0);
    auto [xi, ldi] = rqs_inverse(Tensor({1, 1}, {x}), k, false);
    CHECK(xi[0] == x);
    CHECK(ldi[0] == 0.0);
  }
}

TEST_CASE("analytic inverse: round trips and logdet antisymmetry") {
  Rng rng(17);
  const std::size_t bins = 8;
  const std::size_t n = 10000;
  for (const bool circular : {false, true}) {
    Tensor raw = random_raw(1, n, bins, rng);
    // broadcast a shared x-grid through one batched call
    SplineKnots k = circular ? make_circular_knots(raw, bins, -kPi, kPi)
                             : make_bounded_knots(raw, bins, -1.0, 1.0);
    Tensor x = Tensor::zeros({1, n});
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = circular ? rng.uniform(-kPi, kPi) : rng.uniform(-1.0, 1.0);
    }
    auto [y, ld_f] = rqs_forward(x, k, circular);
    auto [back, ld_i] = rqs_inverse(y, k, circular);
    double worst = 0.0, worst_ld = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(back[i] - x[i]));
      worst_ld = std::max(worst_ld, std::abs(ld_f[i] + ld_i[i]));
    }
    CHECK(worst < 1e-9);
    CHECK(worst_ld < 1e-10);
  }
}

TEST_CASE("inverse of the identity spline is the identity") {
  SplineKnots k = make_bounded_knots(Tensor::zeros({1, 1, 25}), 8, -1.0, 1.0);
  auto [x, ld] = rqs_inverse(Tensor({1, 1}, {0.37}), k, false);
  CHECK(x[0] == doctest::Approx(0.37).epsilon(1e-14));
  CHECK(std::abs(ld[0]) < 1e-12);
}

TEST_CASE("circular spline: periodicity and seam smoothness") {
  Rng rng(19);
  Tensor raw = random_raw(1, 1, 8, rng);
  SplineKnots k = make_circular_knots(raw, 8, -kPi, kPi);

  // full-period shift wraps to the same output
  const double x = 0.83;
  auto [y1, l1] = rqs_forward(Tensor({1, 1}, {x}), k, true);
  auto [y2, l2] = rqs_forward(Tensor({1, 1}, {x + 2.0 * kPi}), k, true);
  CHECK(y1[0] == doctest::Approx(y2[0]).epsilon(1e-10));
  CHECK(l1[0] == doctest::Approx(l2[0]).epsilon(1e-10));

  // derivative continuity across the seam
  const double d_lo = spline_deriv_fd(k, true, -kPi + 1e-9);
  const double d_hi = spline_deriv_fd(k, true, kPi - 1e-9);
  CHECK(std::abs(d_lo - d_hi) < 1e-6);
}

TEST_CASE("monotonicity on dense grids") {
  Rng rng(23);
  for (const bool circular : {false, true}) {
    Tensor raw = random_raw(1, 1, 8, rng, 2.0);
    SplineKnots k = circular ? make_circular_knots(raw, 8, -kPi, kPi)
                             : make_bounded_knots(raw, 8, -1.0, 1.0);
    const double lo = circular ? -kPi : -1.0, hi = circular ? kPi : 1.0;
    double prev = -1e30;
    for (int i = 0; i < 1000; ++i) {
      const double x = lo + (hi - lo) * (i + 0.5) / 1000.0;
      auto [y, ld] = rqs_forward(Tensor({1, 1}, {x}), k, circular);
      (void)ld;
      CHECK(y[0] > prev);
      prev = y[0];
    }
  }
}

TEST_CASE("log I0 against direct quadrature of the defining integral") {
  for (double kappa : {0.0, 0.1, 1.0, 5.0, 20.0, 49.0, 80.0, 200.0}) {
    // I0(k) = (1/pi) Int_0^pi exp(k cos t) dt, evaluated in log space
    const std::size_t n = 20000;
    double maxexp = kappa;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double t = kPi * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
      acc += std::exp(kappa * std::cos(t) - maxexp);
    }
    const double reference = maxexp + std::log(acc / static_cast<double>(n));
    CHECK(std::abs(log_bessel_i0(kappa) - reference) < 1e-10 * (1.0 + std::abs(reference)));
  }
}

TEST_CASE("base distributions: normalization and trivial log densities") {
  BaseDistribution base;
  base.specs = {{BaseKind::kGaussian, 0, 0},
                {BaseKind::kUniform, 0, 0},
                {BaseKind::kVonMises, 0.7, 2.3}};
  // von Mises log density integrates to 1 (quadrature, tolerance 1e-3)
  const std::size_t n = 200000;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = -kPi + 2.0 * kPi * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    z += std::exp(base.log_prob_1d(2, t));
  }
  z *= 2.0 * kPi / static_cast<double>(n);
  CHECK(std::abs(z - 1.0) < 1e-3);

  CHECK(base.log_prob_1d(0, 0.0) == doctest::Approx(-0.5 * std::log(2.0 * kPi)));
  CHECK(base.log_prob_1d(1, 1.2) == doctest::Approx(-std::log(2.0 * kPi)));

  // vector form equals the per-coordinate sum
  Tensor x({1, 3}, {0.2, -1.0, 1.4});
  const double expect =
      base.log_prob_1d(0, 0.2) + base.log_prob_1d(1, -1.0) + base.log_prob_1d(2, 1.4);
  CHECK(base.log_prob(x)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("samplers match their densities (KS at p > 0.01)") {
  const std::size_t n = 10000;
  Rng rng(2025);

  BaseDistribution base;
  base.specs = {{BaseKind::kGaussian, 0, 0},
                {BaseKind::kUniform, 0, 0},
                {BaseKind::kVonMises, -0.4, 1.7}};

  auto draw = [&](std::size_t coord) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = base.sample_1d(coord, rng);
    return out;
  };

  const double crit = testutil::ks_critical_001(n);
  CHECK(testutil::ks_statistic(draw(0), [](double v) {
          return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        }) < crit);
  CHECK(testutil::ks_statistic(draw(1), [](double v) { return (v + kPi) / (2.0 * kPi); }) <
        crit);
  // numeric CDF for the von Mises coordinate
  const std::size_t grid = 20000;
  std::vector<double> cdf(grid + 1, 0.0);
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = -kPi + 2.0 * kPi * (static_cast<double>(i) + 0.5) / static_cast<double>(grid);
    cdf[i + 1] = cdf[i] + std::exp(base.log_prob_1d(2, t)) * 2.0 * kPi / static_cast<double>(grid);
  }
  CHECK(testutil::ks_statistic(draw(2), [&](double v) {
          const double pos = (v + kPi) / (2.0 * kPi) * static_cast<double>(grid);
          const std::size_t idx = std::min(grid, static_cast<std::size_t>(std::max(0.0, pos)));
          return cdf[idx];
        }) < crit);
}
