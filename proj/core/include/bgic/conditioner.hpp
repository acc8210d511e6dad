// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bgic/coords.hpp"
#include "bgic/rng.hpp"
#include "bgic/tape.hpp"
#include "bgic/tensor.hpp"

namespace bgic {

// Evaluation context threaded through the network. A null tape means plain
// eager evaluation; dropout only fires in training mode with an explicit
// stream, so eval passes are deterministic.
struct FlowCtx {
  ad::Tape* tape = nullptr;
  bool training = false;
  Rng* dropout_rng = nullptr;
};

struct GAUConfig {
  std::size_t model_dim = 64;
  std::size_t query_dim = 32;  // shared by queries and keys
  std::size_t value_dim = 64;
  double dropout = 0.1;
  std::size_t gau_layers = 1;  // attention blocks per coupling conditioner
  bool rotary = false;         // rotary Q/K phases instead of the bucketed bias
  std::size_t rel_buckets = 32;
  std::size_t rel_max_distance = 128;
  std::size_t max_residues = 256;

  void validate() const;
};

// (cos, sin) pairs, adjacent per input angle: (..., m) -> (..., 2m).
ad::Tensor circle_augment(const ad::Tensor& angles);

// g * x / max(|x|_2, eps) per token row; x is (b, T, D), gain a scalar.
ad::Tensor scale_norm(const ad::Tensor& x, const ad::Tensor& gain, double eps = 1e-6);

// Elementwise erf attention activation in (0,1); no row normalization.
ad::Tensor laplace_attention(const ad::Tensor& logits);

// Bidirectional T5-style bucket for a signed token offset.
std::size_t relative_bucket(std::ptrdiff_t offset, std::size_t buckets,
                            std::size_t max_distance);

// Learned positional information shared by every coupling block: absolute
// per-token embeddings added at token construction and a bucketed scalar
// bias added to attention logits.
class PositionalScheme {
 public:
  PositionalScheme(const GAUConfig& cfg, std::size_t tokens, Rng& init_rng);

  ad::Tensor absolute_rows(FlowCtx ctx);         // (T, model_dim)
  ad::Tensor bias_matrix(FlowCtx ctx);           // (T, T) from the bucket table
  std::size_t tokens() const { return tokens_; }

  std::vector<ad::Parameter*> parameters();

 private:
  std::size_t tokens_;
  ad::Parameter absolute_;
  ad::Parameter rel_bias_;
  std::vector<std::size_t> bucket_of_;  // T*T bucket indices
};

// One gated attention unit with a residual connection.
class GauBlock {
 public:
  GauBlock(const std::string& prefix, const GAUConfig& cfg, Rng& init_rng);

  // tokens (b, T, model) -> (b, T, model)
  ad::Tensor forward(const ad::Tensor& tokens, PositionalScheme& pos, FlowCtx ctx) const;

  std::vector<ad::Parameter*> parameters();

 private:
  const GAUConfig cfg_;
  ad::Parameter w_base_, gamma_q_, beta_q_, gamma_k_, beta_k_;
  ad::Parameter w_u_, w_v_, w_o_;
  ad::Parameter norm_gain_;
};

// One coordinate as a conditioner sees it: which residue token it feeds and
// which feature slot it occupies there.
struct StackCoord {
  std::size_t global_id = 0;
  std::size_t token = 0;
  std::size_t slot = 0;
  CoordKind kind = CoordKind::kLinear;
  double lo = 0.0, hi = 0.0;
};

// Token geometry of one coupling stack: every flexible residue is a token;
// slots are stable per coordinate across blocks of the stack.
struct StackLayout {
  std::vector<StackCoord> coords;  // stack order
  std::size_t tokens = 0;
  std::size_t slots = 0;  // max coordinates per residue within this stack

  static StackLayout build(const CoordinateLayout& full,
                           const std::vector<std::size_t>& universe);
};

// The conditioner of one coupling block: per-residue tokens built from the
// unit-circle features of the identity half, an input projection, GAU
// blocks, and a zero-initialized head emitting raw spline parameters for
// each transformed coordinate.
class Conditioner {
 public:
  Conditioner(const std::string& prefix, const StackLayout& stack,
              std::vector<std::size_t> a_positions, std::vector<std::size_t> b_positions,
              const GAUConfig& cfg, std::size_t bins, PositionalScheme* pos, Rng& init_rng);

  // x_a: (batch, |A|) normalized coordinates -> (batch, |B|, 3K+1) raw params
  ad::Tensor forward(const ad::Tensor& x_a, FlowCtx ctx) const;

  std::vector<ad::Parameter*> parameters();

 private:
  StackLayout stack_;
  std::vector<std::size_t> a_positions_, b_positions_;
  GAUConfig cfg_;
  std::size_t bins_;
  PositionalScheme* pos_;

  ad::Parameter w_in_, b_in_;
  std::vector<GauBlock> gau_;
  ad::Parameter w_head_, b_head_;

  std::vector<std::size_t> feature_src_;  // (T*2S) source column per slot
};

}  // namespace bgic
