// SPDX-License-Identifier: Apache-2.0
#include "bgic/conditioner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "bgic/errors.hpp"
#include "bgic/spline.hpp"

namespace bgic {

using ad::Shape;
using ad::Tensor;

namespace {

constexpr double kLaplaceMu = 0.70710678118654752440;     // sqrt(1/2)
constexpr double kLaplaceSigma = 0.5;                     // sqrt(1/4)
constexpr double kSqrt2 = 1.41421356237309504880;

Tensor init_matrix(Shape shape, double scale, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
  Tensor m = Tensor::zeros(shape);
  const double keep = 1.0 - p;
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return m;
}

}  // namespace

void GAUConfig::validate() const {
  if (model_dim == 0 || query_dim == 0 || value_dim == 0) {
    throw ConfigError("conditioner: dimensions must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("conditioner: dropout must be in [0,1)");
  if (rotary && query_dim % 2 != 0) {
    throw ConfigError("conditioner: rotary positions need an even query dim");
  }
}

Tensor circle_augment(const Tensor& angles) {
  angles.check_finite("circle_augment input");
  Shape keep = angles.shape();
  keep.push_back(1);
  Tensor col = ad::reshape(angles, keep);
  Tensor pairs = ad::concat({ad::cos(col), ad::sin(col)}, keep.size() - 1);
  Shape out = angles.shape();
  out.back() *= 2;
  return ad::reshape(pairs, out);
}

Tensor scale_norm(const Tensor& x, const Tensor& gain, double eps) {
  if (x.rank() != 3) throw NumericError("scale_norm expects (batch, T, D)");
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor norm = ad::sqrt(ad::sum(x * x, 2));  // (b,T)
  Tensor floor = ad::where(ad::mask_lt(norm, eps), Tensor(eps), norm);
  Tensor denom = ad::broadcast_to(ad::reshape(floor, {b, t, 1}), {b, t, d});
  return x * gain / denom;
}

Tensor laplace_attention(const Tensor& logits) {
  Tensor shifted = (logits - Tensor(kLaplaceMu)) / Tensor(kLaplaceSigma * kSqrt2);
  return (ad::erf(shifted) + Tensor(1.0)) * Tensor(0.5);
}

std::size_t relative_bucket(std::ptrdiff_t offset, std::size_t buckets,
                            std::size_t max_distance) {
  // bidirectional: half the buckets per sign, log-spaced beyond max_exact
  std::size_t half = buckets / 2;
  std::size_t bucket = offset > 0 ? half : 0;
  std::size_t n = static_cast<std::size_t>(offset > 0 ? offset : -offset);
  const std::size_t max_exact = half / 2;
  if (n < max_exact) return bucket + n;
  const double log_ratio = std::log(static_cast<double>(n) / static_cast<double>(max_exact)) /
                           std::log(static_cast<double>(max_distance) /
                                    static_cast<double>(max_exact));
  std::size_t large =
      max_exact + static_cast<std::size_t>(log_ratio * static_cast<double>(half - max_exact));
  return bucket + std::min(large, half - 1);
}

// ---------------------------------------------------------------------------

PositionalScheme::PositionalScheme(const GAUConfig& cfg, std::size_t tokens, Rng& init_rng)
    : tokens_(tokens) {
  if (tokens == 0) throw ConfigError("positional scheme needs at least one token");
  if (tokens > cfg.max_residues) {
    throw ConfigError("sequence length exceeds the configured maximum");
  }
  absolute_ = ad::Parameter("pos.absolute", init_matrix({tokens, cfg.model_dim}, 0.02, init_rng));
  rel_bias_ = ad::Parameter("pos.rel_bias", Tensor::zeros({cfg.rel_buckets}));
  bucket_of_.resize(tokens * tokens);
  for (std::size_t i = 0; i < tokens; ++i) {
    for (std::size_t j = 0; j < tokens; ++j) {
      bucket_of_[i * tokens + j] = relative_bucket(
          static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i), cfg.rel_buckets,
          cfg.rel_max_distance);
    }
  }
}

Tensor PositionalScheme::absolute_rows(FlowCtx ctx) {
  return ctx.tape ? ctx.tape->use(absolute_) : absolute_.value;
}

Tensor PositionalScheme::bias_matrix(FlowCtx ctx) {
  Tensor table = ctx.tape ? ctx.tape->use(rel_bias_) : rel_bias_.value;
  return ad::gather(table, bucket_of_, {tokens_, tokens_});
}

std::vector<ad::Parameter*> PositionalScheme::parameters() { return {&absolute_, &rel_bias_}; }

// ---------------------------------------------------------------------------

GauBlock::GauBlock(const std::string& prefix, const GAUConfig& cfg, Rng& init_rng) : cfg_(cfg) {
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(cfg.model_dim));
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(cfg.value_dim));
  w_base_ = ad::Parameter(prefix + ".w_base",
                          init_matrix({cfg.model_dim, cfg.query_dim}, in_scale, init_rng));
  gamma_q_ = ad::Parameter(prefix + ".gamma_q", Tensor::ones({cfg.query_dim}));
  beta_q_ = ad::Parameter(prefix + ".beta_q", Tensor::zeros({cfg.query_dim}));
  gamma_k_ = ad::Parameter(prefix + ".gamma_k", Tensor::ones({cfg.query_dim}));
  beta_k_ = ad::Parameter(prefix + ".beta_k", Tensor::zeros({cfg.query_dim}));
  w_u_ = ad::Parameter(prefix + ".w_u",
                       init_matrix({cfg.model_dim, cfg.value_dim}, in_scale, init_rng));
  w_v_ = ad::Parameter(prefix + ".w_v",
                       init_matrix({cfg.model_dim, cfg.value_dim}, in_scale, init_rng));
  w_o_ = ad::Parameter(prefix + ".w_o",
                       init_matrix({cfg.value_dim, cfg.model_dim}, out_scale, init_rng));
  norm_gain_ = ad::Parameter(prefix + ".norm_gain", Tensor::ones({}));
}

std::vector<ad::Parameter*> GauBlock::parameters() {
  return {&w_base_, &gamma_q_, &beta_q_, &gamma_k_, &beta_k_, &w_u_, &w_v_, &w_o_, &norm_gain_};
}

Tensor GauBlock::forward(const Tensor& tokens, PositionalScheme& pos, FlowCtx ctx) const {
  const std::size_t b = tokens.dim(0), t = tokens.dim(1);
  auto use = [&](const ad::Parameter& p) {
    return ctx.tape ? ctx.tape->use(const_cast<ad::Parameter&>(p)) : p.value;
  };

  Tensor x = scale_norm(tokens, use(norm_gain_));
  Tensor u = ad::silu(ad::matmul(x, use(w_u_)));
  Tensor v = ad::silu(ad::matmul(x, use(w_v_)));
  Tensor z = ad::silu(ad::matmul(x, use(w_base_)));

  const Shape qk_shape{b, t, cfg_.query_dim};
  auto affine = [&](const ad::Parameter& gamma, const ad::Parameter& beta) {
    Tensor g = ad::broadcast_to(ad::reshape(use(gamma), {1, 1, cfg_.query_dim}), qk_shape);
    Tensor be = ad::broadcast_to(ad::reshape(use(beta), {1, 1, cfg_.query_dim}), qk_shape);
    return z * g + be;
  };
  Tensor q = affine(gamma_q_, beta_q_);
  Tensor kk = affine(gamma_k_, beta_k_);

  if (cfg_.rotary) {
    // half-split rotation with fixed per-position phases
    const std::size_t hd = cfg_.query_dim / 2;
    Tensor cosv = Tensor::zeros({t, hd});
    Tensor sinv = Tensor::zeros({t, hd});
    for (std::size_t p = 0; p < t; ++p) {
      for (std::size_t i = 0; i < hd; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                   static_cast<double>(cfg_.query_dim));
        cosv[p * hd + i] = std::cos(static_cast<double>(p) * freq);
        sinv[p * hd + i] = std::sin(static_cast<double>(p) * freq);
      }
    }
    Tensor cb = ad::broadcast_to(ad::reshape(cosv, {1, t, hd}), {b, t, hd});
    Tensor sb = ad::broadcast_to(ad::reshape(sinv, {1, t, hd}), {b, t, hd});
    auto rotate = [&](const Tensor& m) {
      Tensor m1 = ad::slice(m, 2, 0, hd);
      Tensor m2 = ad::slice(m, 2, hd, hd);
      return ad::concat({m1 * cb - m2 * sb, m1 * sb + m2 * cb}, 2);
    };
    q = rotate(q);
    kk = rotate(kk);
  }

  Tensor logits =
      ad::matmul(q, ad::transpose(kk)) / Tensor(std::sqrt(static_cast<double>(cfg_.query_dim)));
  if (!cfg_.rotary) {
    Tensor bias = pos.bias_matrix(ctx);
    logits = logits + ad::broadcast_to(ad::reshape(bias, {1, t, t}), {b, t, t});
  }
  Tensor attn = laplace_attention(logits);
  if (ctx.training && cfg_.dropout > 0.0 && ctx.dropout_rng) {
    attn = attn * dropout_mask(attn.shape(), cfg_.dropout, *ctx.dropout_rng);
  }

  Tensor gated = u * ad::matmul(attn, v);
  Tensor out = ad::matmul(gated, use(w_o_));
  if (ctx.training && cfg_.dropout > 0.0 && ctx.dropout_rng) {
    out = out * dropout_mask(out.shape(), cfg_.dropout, *ctx.dropout_rng);
  }
  return tokens + out;
}

// ---------------------------------------------------------------------------

StackLayout StackLayout::build(const CoordinateLayout& full,
                               const std::vector<std::size_t>& universe) {
  StackLayout s;
  const std::vector<int> residues = full.residues();
  auto token_of = [&](int residue) {
    const auto it = std::find(residues.begin(), residues.end(), residue);
    return static_cast<std::size_t>(it - residues.begin());
  };
  s.tokens = residues.size();
  std::map<std::size_t, std::size_t> next_slot;
  for (std::size_t pos : universe) {
    const CoordInfo& info = full.coords.at(pos);
    StackCoord c;
    c.global_id = pos;
    c.token = token_of(info.residue);
    c.slot = next_slot[c.token]++;
    c.kind = info.kind;
    c.lo = info.lo;
    c.hi = info.hi;
    s.coords.push_back(c);
  }
  s.slots = 0;
  for (const auto& [token, count] : next_slot) s.slots = std::max(s.slots, count);
  if (s.slots == 0) s.slots = 1;
  return s;
}

Conditioner::Conditioner(const std::string& prefix, const StackLayout& stack,
                         std::vector<std::size_t> a_positions,
                         std::vector<std::size_t> b_positions, const GAUConfig& cfg,
                         std::size_t bins, PositionalScheme* pos, Rng& init_rng)
    : stack_(stack),
      a_positions_(std::move(a_positions)),
      b_positions_(std::move(b_positions)),
      cfg_(cfg),
      bins_(bins),
      pos_(pos) {
  cfg_.validate();
  const std::size_t width = 2 * stack_.slots;
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(width));
  w_in_ = ad::Parameter(prefix + ".w_in", init_matrix({width, cfg_.model_dim}, in_scale, init_rng));
  b_in_ = ad::Parameter(prefix + ".b_in", Tensor::zeros({cfg_.model_dim}));
  for (std::size_t l = 0; l < cfg_.gau_layers; ++l) {
    gau_.emplace_back(prefix + ".gau" + std::to_string(l), cfg_, init_rng);
  }
  const std::size_t head_width = stack_.slots * spline_param_count(bins_);
  // zero-initialized head: every coupling block starts as the identity map
  w_head_ = ad::Parameter(prefix + ".w_head", Tensor::zeros({cfg_.model_dim, head_width}));
  b_head_ = ad::Parameter(prefix + ".b_head", Tensor::zeros({head_width}));

  // Static featurization map: target slot column -> source column in the
  // flattened per-sample feature vector (2|A| pairs + one zero column).
  const std::size_t zero_col = 2 * a_positions_.size();
  feature_src_.assign(stack_.tokens * width, zero_col);
  for (std::size_t idx = 0; idx < a_positions_.size(); ++idx) {
    const StackCoord& c = stack_.coords.at(a_positions_[idx]);
    feature_src_[c.token * width + 2 * c.slot] = 2 * idx;
    feature_src_[c.token * width + 2 * c.slot + 1] = 2 * idx + 1;
  }
}

std::vector<ad::Parameter*> Conditioner::parameters() {
  std::vector<ad::Parameter*> out{&w_in_, &b_in_};
  for (GauBlock& g : gau_) {
    for (ad::Parameter* p : g.parameters()) out.push_back(p);
  }
  out.push_back(&w_head_);
  out.push_back(&b_head_);
  return out;
}

Tensor Conditioner::forward(const Tensor& x_a, FlowCtx ctx) const {
  if (x_a.rank() != 2 || x_a.dim(1) != a_positions_.size()) {
    throw NumericError("conditioner: conditioning block has wrong shape");
  }
  const std::size_t b = x_a.dim(0);
  const std::size_t width = 2 * stack_.slots;
  auto use = [&](const ad::Parameter& p) {
    return ctx.tape ? ctx.tape->use(const_cast<ad::Parameter&>(p)) : p.value;
  };

  // Feature pairs per conditioning coordinate: unit-circle image of the
  // physical angle; normalized value and its square for linear coordinates.
  std::vector<Tensor> pairs;
  pairs.reserve(a_positions_.size() + 1);
  for (std::size_t idx = 0; idx < a_positions_.size(); ++idx) {
    const StackCoord& c = stack_.coords.at(a_positions_[idx]);
    Tensor u = ad::reshape(ad::slice(x_a, 1, idx, 1), {b, 1});
    if (c.kind == CoordKind::kBoundedAngle) {
      const double mid = 0.5 * (c.lo + c.hi), half = 0.5 * (c.hi - c.lo);
      Tensor v = u * Tensor(half) + Tensor(mid);
      pairs.push_back(circle_augment(v));
    } else if (c.kind == CoordKind::kCircular) {
      pairs.push_back(circle_augment(u));
    } else {
      const double scale = c.hi > 0.0 ? 1.0 / c.hi : 1.0;
      Tensor v = u * Tensor(scale);
      pairs.push_back(ad::concat({v, v * v}, 1));
    }
  }
  pairs.push_back(Tensor::zeros({b, 1}));
  Tensor flat = ad::concat(pairs, 1);  // (b, 2|A|+1)

  const std::size_t src_width = 2 * a_positions_.size() + 1;
  std::vector<std::size_t> idx(b * stack_.tokens * width);
  for (std::size_t row = 0; row < b; ++row) {
    for (std::size_t col = 0; col < stack_.tokens * width; ++col) {
      idx[row * stack_.tokens * width + col] = row * src_width + feature_src_[col];
    }
  }
  Tensor features =
      ad::reshape(ad::gather(flat, idx, {b, stack_.tokens * width}), {b, stack_.tokens, width});

  Tensor tokens = ad::matmul(features, use(w_in_)) +
                  ad::broadcast_to(ad::reshape(use(b_in_), {1, 1, cfg_.model_dim}),
                                   {b, stack_.tokens, cfg_.model_dim});
  tokens = tokens + ad::broadcast_to(
                        ad::reshape(pos_->absolute_rows(ctx), {1, stack_.tokens, cfg_.model_dim}),
                        {b, stack_.tokens, cfg_.model_dim});
  for (const GauBlock& g : gau_) tokens = g.forward(tokens, *pos_, ctx);

  const std::size_t pcount = spline_param_count(bins_);
  const std::size_t head_width = stack_.slots * pcount;
  Tensor head = ad::matmul(tokens, use(w_head_)) +
                ad::broadcast_to(ad::reshape(use(b_head_), {1, 1, head_width}),
                                 {b, stack_.tokens, head_width});

  // Pick each transformed coordinate's parameter row off its residue token.
  std::vector<std::size_t> pick(b * b_positions_.size());
  for (std::size_t row = 0; row < b; ++row) {
    for (std::size_t j = 0; j < b_positions_.size(); ++j) {
      const StackCoord& c = stack_.coords.at(b_positions_[j]);
      pick[row * b_positions_.size() + j] =
          row * stack_.tokens * stack_.slots + c.token * stack_.slots + c.slot;
    }
  }
  return ad::gather_rows(head, pick, {b, b_positions_.size(), pcount});
}

}  // namespace bgic
