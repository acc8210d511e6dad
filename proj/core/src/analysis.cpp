// SPDX-License-Identifier: Apache-2.0
#include "bgic/analysis.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

#include "bgic/errors.hpp"

namespace bgic {

namespace {

Eigen::Vector3d centroid(const CartesianState& c) {
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  const std::size_t n = c.atom_count();
  for (std::size_t i = 0; i < n; ++i) m += Eigen::Vector3d(c.x(i), c.y(i), c.z(i));
  return m / static_cast<double>(n);
}

// Optimal proper rotation taking centered `a` onto centered `b`.
Eigen::Matrix3d kabsch_rotation(const CartesianState& a, const CartesianState& b,
                                const Eigen::Vector3d& ca, const Eigen::Vector3d& cb) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  const std::size_t n = a.atom_count();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d pa = Eigen::Vector3d(a.x(i), a.y(i), a.z(i)) - ca;
    const Eigen::Vector3d pb = Eigen::Vector3d(b.x(i), b.y(i), b.z(i)) - cb;
    h += pa * pb.transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return v * d * u.transpose();
}

}  // namespace

void kabsch_align(CartesianState& mobile, const CartesianState& target) {
  if (mobile.atom_count() != target.atom_count()) {
    throw NumericError("kabsch_align: atom count mismatch");
  }
  const Eigen::Vector3d cm = centroid(mobile);
  const Eigen::Vector3d ct = centroid(target);
  const Eigen::Matrix3d r = kabsch_rotation(mobile, target, cm, ct);
  const std::size_t n = mobile.atom_count();
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p =
        r * (Eigen::Vector3d(mobile.x(i), mobile.y(i), mobile.z(i)) - cm) + ct;
    mobile.xyz[3 * i] = p.x();
    mobile.xyz[3 * i + 1] = p.y();
    mobile.xyz[3 * i + 2] = p.z();
  }
}

double rmsd_aligned(const CartesianState& a, const CartesianState& b) {
  if (a.atom_count() != b.atom_count()) throw NumericError("rmsd: atom count mismatch");
  CartesianState mobile = a;
  kabsch_align(mobile, b);
  double s = 0.0;
  const std::size_t n = a.atom_count();
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = mobile.x(i) - b.x(i);
    const double dy = mobile.y(i) - b.y(i);
    const double dz = mobile.z(i) - b.z(i);
    s += dx * dx + dy * dy + dz * dz;
  }
  return std::sqrt(s / static_cast<double>(n));
}

namespace {

CartesianState batch_mean(const std::vector<CartesianState>& batch) {
  CartesianState mean;
  mean.xyz.assign(batch[0].xyz.size(), 0.0);
  for (const CartesianState& f : batch) {
    for (std::size_t i = 0; i < mean.xyz.size(); ++i) mean.xyz[i] += f.xyz[i];
  }
  for (double& v : mean.xyz) v /= static_cast<double>(batch.size());
  return mean;
}

}  // namespace

std::vector<double> rmsf(const Topology& top, std::vector<CartesianState> batch) {
  if (batch.size() < 2) throw NumericError("rmsf: batch must hold at least 2 structures");

  // Two rounds of align-to-mean; the first mean is taken over raw frames.
  CartesianState mean = batch_mean(batch);
  for (int round = 0; round < 2; ++round) {
    for (CartesianState& f : batch) kabsch_align(f, mean);
    mean = batch_mean(batch);
  }

  const std::vector<int> ca = top.calpha_atoms();
  std::vector<double> out(ca.size(), 0.0);
  for (std::size_t r = 0; r < ca.size(); ++r) {
    if (ca[r] < 0) continue;
    double s = 0.0;
    for (const CartesianState& f : batch) {
      const double dx = f.x(ca[r]) - mean.x(ca[r]);
      const double dy = f.y(ca[r]) - mean.y(ca[r]);
      const double dz = f.z(ca[r]) - mean.z(ca[r]);
      s += dx * dx + dy * dy + dz * dz;
    }
    out[r] = std::sqrt(s / static_cast<double>(batch.size()));
  }
  return out;
}

namespace {

double mean_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

double distance_distortion(const Topology& top, const std::vector<CartesianState>& samples_q,
                           const std::vector<CartesianState>& samples_p, bool all_pairs) {
  if (samples_q.empty() || samples_p.empty()) {
    throw NumericError("distance_distortion: empty batch");
  }
  std::vector<std::vector<double>> dq(samples_q.size()), dp(samples_p.size());
  for (std::size_t i = 0; i < samples_q.size(); ++i) {
    dq[i] = backbone_distance_vector(top, samples_q[i]);
  }
  for (std::size_t i = 0; i < samples_p.size(); ++i) {
    dp[i] = backbone_distance_vector(top, samples_p[i]);
  }
  if (all_pairs) {
    double s = 0.0;
    for (const auto& q : dq) {
      for (const auto& p : dp) s += mean_abs_diff(q, p);
    }
    return s / static_cast<double>(dq.size() * dp.size());
  }
  if (samples_q.size() != samples_p.size()) {
    throw NumericError("distance_distortion: paired mode needs equal batch sizes");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < dq.size(); ++i) s += mean_abs_diff(dq[i], dp[i]);
  return s / static_cast<double>(dq.size());
}

}  // namespace bgic
