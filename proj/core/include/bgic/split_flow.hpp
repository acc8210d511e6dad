// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bgic/base_dist.hpp"
#include "bgic/conditioner.hpp"
#include "bgic/coords.hpp"
#include "bgic/rng.hpp"
#include "bgic/spline.hpp"
#include "bgic/tape.hpp"
#include "bgic/topology.hpp"

namespace bgic {

struct SplitFlowConfig {
  std::size_t backbone_blocks = 8;
  std::size_t joint_blocks = 4;
  std::size_t bins = 8;
  GAUConfig conditioner;
  BaseKind dihedral_base = BaseKind::kUniform;
  double von_mises_kappa = 1.0;

  std::string to_json_string() const;
  static SplitFlowConfig from_json_string(const std::string& text);
};

// One masked transform: the identity half conditions per-coordinate splines
// over the transformed half. Operates on the stack's normalized coordinates.
class CouplingLayer {
 public:
  CouplingLayer(const std::string& prefix, const StackLayout& stack,
                std::vector<std::size_t> a_positions, std::vector<std::size_t> b_positions,
                const GAUConfig& cfg, std::size_t bins, PositionalScheme* pos, Rng& init_rng);

  // u: (batch, n_stack) -> (y, per-sample logdet)
  std::pair<ad::Tensor, ad::Tensor> forward(const ad::Tensor& u, FlowCtx ctx) const;
  std::pair<ad::Tensor, ad::Tensor> inverse(const ad::Tensor& u, FlowCtx ctx) const;

  const std::vector<std::size_t>& transformed_positions() const { return b_positions_; }
  std::vector<ad::Parameter*> parameters() { return conditioner_.parameters(); }

 private:
  struct Group {
    bool circular = false;
    double lo = 0.0, hi = 0.0;
    std::vector<std::size_t> members;  // indices into b_positions_
  };

  std::pair<ad::Tensor, ad::Tensor> apply(const ad::Tensor& u, FlowCtx ctx, bool inverse) const;

  std::size_t stack_size_ = 0;
  std::vector<std::size_t> a_positions_, b_positions_;
  std::vector<Group> groups_;
  std::vector<std::size_t> reassemble_;  // output column -> concat source column
  std::size_t bins_;
  Conditioner conditioner_;
};

struct SampleResult {
  ad::Tensor x;               // (n, d) physical coordinates
  ad::Tensor log_prob;        // (n,)
  ad::Tensor forward_logdet;  // (n,) total log|det dx/dz|
  ad::Tensor z;               // (n, d) base draws (detached)
};

// Interface the losses train against.
class FlowModel {
 public:
  virtual ~FlowModel() = default;
  virtual std::size_t dim() const = 0;
  virtual ad::Tensor log_prob(const ad::Tensor& x, FlowCtx ctx) = 0;
  virtual SampleResult sample(std::size_t n, Rng& rng, FlowCtx ctx) = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;
};

// The split architecture: a backbone stack over backbone coordinates, then a
// joint stack over the concatenation with side-chain coordinates. The first
// joint block transforms exactly the side-chain half conditioned on the
// backbone; later blocks alternate seeded permuted halves. Identity at
// initialization.
class SplitFlow : public FlowModel {
 public:
  SplitFlow(const CoordinateLayout& layout, const SplitFlowConfig& config, std::uint64_t seed);

  std::size_t dim() const override { return layout_.size(); }
  const CoordinateLayout& layout() const { return layout_; }
  const SplitFlowConfig& config() const { return config_; }
  const BaseDistribution& base() const { return base_; }

  ad::Tensor log_prob(const ad::Tensor& x, FlowCtx ctx) override;
  SampleResult sample(std::size_t n, Rng& rng, FlowCtx ctx) override;

  // Deterministic forward map z -> (x, total logdet) for fixed base draws.
  std::pair<ad::Tensor, ad::Tensor> push_forward(const ad::Tensor& z, FlowCtx ctx);
  // Exact inverse: x -> (z, log|det dz/dx|).
  std::pair<ad::Tensor, ad::Tensor> pull_back(const ad::Tensor& x, FlowCtx ctx);

  std::vector<ad::Parameter*> parameters() override;
  std::size_t parameter_count();

  ad::Tensor normalize(const ad::Tensor& x) const;
  ad::Tensor denormalize(const ad::Tensor& u) const;
  // log|det du/dx| summed over bounded coordinates (a constant).
  double normalization_logdet() const;

 private:
  CoordinateLayout layout_;
  SplitFlowConfig config_;
  BaseDistribution base_;
  std::size_t n_backbone_ = 0;
  std::unique_ptr<PositionalScheme> pos_;
  std::vector<CouplingLayer> backbone_, joint_;
};

// Masks: alternating halves with a seeded permutation between consecutive
// blocks; validates that every coordinate is transformed somewhere in its
// stack. Throws ConfigError on inconsistent configs.
std::unique_ptr<SplitFlow> build_split_flow(const CoordinateLayout& layout,
                                            const SplitFlowConfig& config, std::uint64_t seed);
std::unique_ptr<SplitFlow> build_split_flow(const Topology& topology,
                                            const SplitFlowConfig& config, std::uint64_t seed);

}  // namespace bgic
