// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "bgic/dataset.hpp"
#include "bgic/energy.hpp"
#include "bgic/split_flow.hpp"
#include "bgic/topology.hpp"

namespace bgic {

// Mean and covariance of the vectorized backbone distance matrices of the
// reference ensemble.
struct MomentEstimates {
  ad::Tensor mu;     // (|P|,)
  ad::Tensor sigma;  // (|P|, |P|), symmetric
};

// -mean log q over a batch of physical coordinates (batch, d).
ad::Tensor nll_loss(FlowModel& flow, const ad::Tensor& batch, FlowCtx ctx);

// Monte-Carlo reverse-KL estimate up to additive constants:
// mean[ clip(u_red(f(z))) - log|det J_f(z)| ] with gradients through the
// sampling path. Values above `clip` are clamped (clamped count reported).
struct KlEstimate {
  ad::Tensor loss;
  std::size_t clipped = 0;
};
KlEstimate kl_loss(FlowModel& flow, const EnergyModel& target, std::size_t n, Rng& rng,
                   FlowCtx ctx, double clip = 1e4);

// Symmetric PSD square root via eigendecomposition (eigenvalues clamped at
// zero). Differentiable.
ad::Tensor psd_sqrt(const ad::Tensor& sigma);

// Squared 2-Wasserstein between Gaussian summaries. Both covariances get
// +1e-6 I regularization; the cross term uses the symmetrized product
// sqrt(S_q Sigma_p S_q).
ad::Tensor w2_from_moments(const ad::Tensor& mu_q, const ad::Tensor& sigma_q,
                           const MomentEstimates& reference);

// Batch estimator over q-side distance vectors (batch >= 2, (batch, |P|)).
ad::Tensor w2_loss(const ad::Tensor& q_vectors, const MomentEstimates& reference);

// Batch mean / unbiased covariance of row vectors, differentiable.
std::pair<ad::Tensor, ad::Tensor> batch_moments(const ad::Tensor& rows);

// Streaming moments of backbone distance vectors over all dataset frames.
MomentEstimates fit_reference_moments(const TrajectoryDataset& dataset, const Topology& top);

// Self-normalized importance weights from log w_i = -u_i - log q_i (reduced
// energies) and the effective sample size as a percentage of n.
struct ImportanceMetrics {
  std::vector<double> weights;  // normalized
  double ess_percent = 0.0;
  bool degenerate = false;  // all weights underflowed
};
ImportanceMetrics importance_metrics(const std::vector<double>& reduced_energies,
                                     const std::vector<double>& log_probs);

}  // namespace bgic
