// SPDX-License-Identifier: Apache-2.0
#include "bgic/losses.hpp"

#include <algorithm>
#include <cmath>

#include "bgic/errors.hpp"
#include "bgic/geometry.hpp"

namespace bgic {

using ad::Tensor;

Tensor nll_loss(FlowModel& flow, const Tensor& batch, FlowCtx ctx) {
  if (batch.rank() != 2 || batch.dim(0) == 0) throw NumericError("nll_loss: empty batch");
  return ad::neg(ad::mean(flow.log_prob(batch, ctx)));
}

KlEstimate kl_loss(FlowModel& flow, const EnergyModel& target, std::size_t n, Rng& rng,
                   FlowCtx ctx, double clip) {
  if (n == 0) throw NumericError("kl_loss: needs at least one sample");
  SampleResult s = flow.sample(n, rng, ctx);
  Tensor reduced = target.reduced_energy(s.x);
  reduced.check_finite("reduced energies in kl_loss");
  Tensor over = ad::mask_gt(reduced, clip);
  KlEstimate out;
  for (double v : over.data()) out.clipped += v != 0.0 ? 1 : 0;
  Tensor clamped = ad::where(over, Tensor(clip), reduced);
  out.loss = ad::mean(clamped - s.forward_logdet);
  return out;
}

Tensor psd_sqrt(const Tensor& sigma) {
  if (sigma.rank() != 2 || sigma.dim(0) != sigma.dim(1)) {
    throw NumericError("psd_sqrt expects a square matrix");
  }
  auto [vals, vecs] = ad::symeig(sigma);  // validates symmetry
  Tensor clamped = ad::where(ad::mask_lt(vals, 0.0), Tensor(0.0), vals);
  const std::size_t d = sigma.dim(0);
  Tensor scaled = vecs * ad::broadcast_to(ad::reshape(ad::sqrt(clamped), {1, d}), {d, d});
  return ad::matmul(scaled, ad::transpose(vecs));
}

namespace {

Tensor regularized(const Tensor& sigma) {
  const std::size_t d = sigma.dim(0);
  Tensor eye = Tensor::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1e-6;
  return sigma + eye;
}

Tensor trace_of(const Tensor& m) {
  const std::size_t d = m.dim(0);
  std::vector<std::size_t> diag(d);
  for (std::size_t i = 0; i < d; ++i) diag[i] = i * d + i;
  return ad::sum(ad::gather(m, diag, {d}));
}

}  // namespace

Tensor w2_from_moments(const Tensor& mu_q, const Tensor& sigma_q,
                       const MomentEstimates& reference) {
  if (mu_q.shape() != reference.mu.shape()) throw NumericError("w2: mean dimension mismatch");
  if (sigma_q.shape() != reference.sigma.shape()) {
    throw NumericError("w2: covariance dimension mismatch");
  }
  Tensor sq = regularized(sigma_q);
  Tensor sp = regularized(reference.sigma);
  Tensor diff = mu_q - reference.mu;
  Tensor root_q = psd_sqrt(sq);
  Tensor cross = psd_sqrt(ad::matmul(ad::matmul(root_q, sp), root_q));
  return ad::sum(diff * diff) + trace_of(sq) + trace_of(sp) -
         Tensor(2.0) * trace_of(cross);
}

std::pair<Tensor, Tensor> batch_moments(const Tensor& rows) {
  if (rows.rank() != 2 || rows.dim(0) < 2) {
    throw NumericError("batch_moments: need at least two rows");
  }
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  Tensor mu = ad::mean(rows, 0);  // (d,)
  Tensor centered = rows - ad::broadcast_to(ad::reshape(mu, {1, d}), {n, d});
  Tensor sigma = ad::matmul(ad::transpose(centered), centered) /
                 Tensor(static_cast<double>(n - 1));
  return {mu, sigma};
}

Tensor w2_loss(const Tensor& q_vectors, const MomentEstimates& reference) {
  auto [mu, sigma] = batch_moments(q_vectors);
  return w2_from_moments(mu, sigma, reference);
}

MomentEstimates fit_reference_moments(const TrajectoryDataset& dataset, const Topology& top) {
  const std::size_t frames = dataset.frame_count();
  if (frames < 2) throw NumericError("fit_reference_moments: need at least two frames");
  const std::size_t p = backbone_pair_count(top);
  std::vector<double> sum(p, 0.0);
  std::vector<double> outer(p * p, 0.0);

  const std::size_t chunk = 1024;
  const std::size_t width = dataset.width();
  for (std::size_t begin = 0; begin < frames; begin += chunk) {
    const std::size_t end = std::min(frames, begin + chunk);
    Tensor reduced({end - begin, width},
                   std::vector<double>(
                       dataset.values.begin() + static_cast<std::ptrdiff_t>(begin * width),
                       dataset.values.begin() + static_cast<std::ptrdiff_t>(end * width)));
    std::vector<Vec3T> pos = reconstruct_positions(top, top.reference, reduced);
    Tensor dv = backbone_distances(top, pos);  // (chunk, p)
    for (std::size_t f = 0; f < end - begin; ++f) {
      const double* row = dv.raw() + f * p;
      for (std::size_t i = 0; i < p; ++i) {
        sum[i] += row[i];
        for (std::size_t j = i; j < p; ++j) outer[i * p + j] += row[i] * row[j];
      }
    }
  }

  MomentEstimates m;
  m.mu = Tensor::zeros({p});
  m.sigma = Tensor::zeros({p, p});
  const double n = static_cast<double>(frames);
  for (std::size_t i = 0; i < p; ++i) m.mu[i] = sum[i] / n;
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      const double cov = (outer[i * p + j] - n * m.mu[i] * m.mu[j]) / (n - 1.0);
      m.sigma[i * p + j] = cov;
      m.sigma[j * p + i] = cov;
    }
  }
  return m;
}

ImportanceMetrics importance_metrics(const std::vector<double>& reduced_energies,
                                     const std::vector<double>& log_probs) {
  if (reduced_energies.size() != log_probs.size()) {
    throw NumericError("importance_metrics: length mismatch");
  }
  const std::size_t n = reduced_energies.size();
  ImportanceMetrics out;
  if (n == 0) {
    out.degenerate = true;
    return out;
  }
  std::vector<double> logw(n);
  double maxw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    logw[i] = -reduced_energies[i] - log_probs[i];
    maxw = std::max(maxw, logw[i]);
  }
  if (!std::isfinite(maxw)) {
    out.degenerate = true;
    out.weights.assign(n, 0.0);
    return out;
  }
  double z = 0.0;
  out.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] = std::exp(logw[i] - maxw);
    z += out.weights[i];
  }
  double sumsq = 0.0;
  for (double& w : out.weights) {
    w /= z;
    sumsq += w * w;
  }
  out.ess_percent = 100.0 / (static_cast<double>(n) * sumsq);
  return out;
}

}  // namespace bgic
