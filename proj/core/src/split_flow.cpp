// SPDX-License-Identifier: Apache-2.0
#include "bgic/split_flow.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "bgic/errors.hpp"

namespace bgic {

using ad::Shape;
using ad::Tensor;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

// Spline interval of a coordinate in normalized space.
void normalized_interval(const StackCoord& c, bool* circular, double* lo, double* hi) {
  switch (c.kind) {
    case CoordKind::kBoundedAngle:
      *circular = false;
      *lo = -1.0;
      *hi = 1.0;
      return;
    case CoordKind::kCircular:
      *circular = true;
      *lo = -kPi;
      *hi = kPi;
      return;
    case CoordKind::kLinear:
      *circular = false;
      *lo = c.lo;
      *hi = c.hi;
      return;
  }
}

Tensor gather_columns(const Tensor& m, const std::vector<std::size_t>& cols) {
  const std::size_t b = m.dim(0), w = m.dim(1);
  std::vector<std::size_t> idx(b * cols.size());
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) idx[r * cols.size() + j] = r * w + cols[j];
  }
  return ad::gather(m, idx, {b, cols.size()});
}

std::vector<std::size_t> sorted_positions(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// CouplingLayer

CouplingLayer::CouplingLayer(const std::string& prefix, const StackLayout& stack,
                             std::vector<std::size_t> a_positions,
                             std::vector<std::size_t> b_positions, const GAUConfig& cfg,
                             std::size_t bins, PositionalScheme* pos, Rng& init_rng)
    : stack_size_(stack.coords.size()),
      a_positions_(sorted_positions(std::move(a_positions))),
      b_positions_(sorted_positions(std::move(b_positions))),
      bins_(bins),
      conditioner_(prefix, stack, a_positions_, b_positions_, cfg, bins, pos, init_rng) {
  // Group transformed coordinates by spline variant and interval.
  std::map<std::tuple<bool, double, double>, std::size_t> group_of;
  for (std::size_t j = 0; j < b_positions_.size(); ++j) {
    bool circ = false;
    double lo = 0.0, hi = 0.0;
    normalized_interval(stack.coords.at(b_positions_[j]), &circ, &lo, &hi);
    auto key = std::make_tuple(circ, lo, hi);
    auto it = group_of.find(key);
    if (it == group_of.end()) {
      Group g;
      g.circular = circ;
      g.lo = lo;
      g.hi = hi;
      groups_.push_back(g);
      it = group_of.emplace(key, groups_.size() - 1).first;
    }
    groups_[it->second].members.push_back(j);
  }

  // Output column map: sources are [x_A columns | group outputs in order].
  reassemble_.assign(stack_size_, 0);
  std::size_t offset = 0;
  for (std::size_t j = 0; j < a_positions_.size(); ++j) reassemble_[a_positions_[j]] = offset++;
  for (const Group& g : groups_) {
    for (std::size_t member : g.members) {
      reassemble_[b_positions_[member]] = offset++;
    }
  }
}

std::pair<Tensor, Tensor> CouplingLayer::apply(const Tensor& u, FlowCtx ctx,
                                               bool inverse) const {
  if (u.rank() != 2 || u.dim(1) != stack_size_) {
    throw NumericError("coupling: input has wrong stack width");
  }
  const std::size_t b = u.dim(0);
  Tensor x_a = gather_columns(u, a_positions_);
  Tensor raw = conditioner_.forward(x_a, ctx);

  std::vector<Tensor> parts{x_a};
  Tensor logdet = Tensor::zeros({b});
  for (const Group& g : groups_) {
    std::vector<std::size_t> cols(g.members.size());
    for (std::size_t i = 0; i < g.members.size(); ++i) cols[i] = b_positions_[g.members[i]];
    Tensor xg = gather_columns(u, cols);

    // rows of raw for this group: (b, ng, P)
    const std::size_t pcount = spline_param_count(bins_);
    std::vector<std::size_t> idx(b * g.members.size());
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t i = 0; i < g.members.size(); ++i) {
        idx[r * g.members.size() + i] = r * b_positions_.size() + g.members[i];
      }
    }
    Tensor raw_g = ad::gather_rows(raw, idx, {b, g.members.size(), pcount});

    SplineKnots knots = g.circular ? make_circular_knots(raw_g, bins_, g.lo, g.hi)
                                   : make_bounded_knots(raw_g, bins_, g.lo, g.hi);
    auto [yg, ld] = inverse ? rqs_inverse(xg, knots, g.circular)
                            : rqs_forward(xg, knots, g.circular);
    parts.push_back(yg);
    logdet = logdet + ad::sum(ld, 1);
  }

  Tensor pool = ad::concat(parts, 1);
  const std::size_t w = pool.dim(1);
  std::vector<std::size_t> idx(b * stack_size_);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < stack_size_; ++j) {
      idx[r * stack_size_ + j] = r * w + reassemble_[j];
    }
  }
  Tensor y = ad::gather(pool, idx, {b, stack_size_});
  return {y, logdet};
}

std::pair<Tensor, Tensor> CouplingLayer::forward(const Tensor& u, FlowCtx ctx) const {
  return apply(u, ctx, false);
}

std::pair<Tensor, Tensor> CouplingLayer::inverse(const Tensor& u, FlowCtx ctx) const {
  return apply(u, ctx, true);
}

// ---------------------------------------------------------------------------
// Config serialization

std::string SplitFlowConfig::to_json_string() const {
  json j;
  j["backbone_blocks"] = backbone_blocks;
  j["joint_blocks"] = joint_blocks;
  j["bins"] = bins;
  j["model_dim"] = conditioner.model_dim;
  j["query_dim"] = conditioner.query_dim;
  j["value_dim"] = conditioner.value_dim;
  j["dropout"] = conditioner.dropout;
  j["gau_layers"] = conditioner.gau_layers;
  j["positional"] = conditioner.rotary ? "rotary" : "absolute_t5";
  j["rel_buckets"] = conditioner.rel_buckets;
  j["rel_max_distance"] = conditioner.rel_max_distance;
  j["max_residues"] = conditioner.max_residues;
  switch (dihedral_base) {
    case BaseKind::kUniform: j["dihedral_base"] = "uniform"; break;
    case BaseKind::kVonMises: j["dihedral_base"] = "von_mises"; break;
    case BaseKind::kGaussian: j["dihedral_base"] = "gaussian"; break;
  }
  j["von_mises_kappa"] = von_mises_kappa;
  return j.dump();
}

SplitFlowConfig SplitFlowConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("architecture config: invalid JSON: ") + e.what());
  }
  SplitFlowConfig c;
  c.backbone_blocks = j.value("backbone_blocks", c.backbone_blocks);
  c.joint_blocks = j.value("joint_blocks", c.joint_blocks);
  c.bins = j.value("bins", c.bins);
  c.conditioner.model_dim = j.value("model_dim", c.conditioner.model_dim);
  c.conditioner.query_dim = j.value("query_dim", c.conditioner.query_dim);
  c.conditioner.value_dim = j.value("value_dim", c.conditioner.value_dim);
  c.conditioner.dropout = j.value("dropout", c.conditioner.dropout);
  c.conditioner.gau_layers = j.value("gau_layers", c.conditioner.gau_layers);
  const std::string positional = j.value("positional", std::string("absolute_t5"));
  if (positional == "rotary") {
    c.conditioner.rotary = true;
  } else if (positional == "absolute_t5") {
    c.conditioner.rotary = false;
  } else {
    throw ConfigError("architecture config: unknown positional scheme '" + positional + "'");
  }
  c.conditioner.rel_buckets = j.value("rel_buckets", c.conditioner.rel_buckets);
  c.conditioner.rel_max_distance = j.value("rel_max_distance", c.conditioner.rel_max_distance);
  c.conditioner.max_residues = j.value("max_residues", c.conditioner.max_residues);
  const std::string base = j.value("dihedral_base", std::string("uniform"));
  if (base == "uniform") {
    c.dihedral_base = BaseKind::kUniform;
  } else if (base == "von_mises") {
    c.dihedral_base = BaseKind::kVonMises;
  } else {
    throw ConfigError("architecture config: unknown dihedral base '" + base + "'");
  }
  c.von_mises_kappa = j.value("von_mises_kappa", c.von_mises_kappa);
  return c;
}

// ---------------------------------------------------------------------------
// SplitFlow

SplitFlow::SplitFlow(const CoordinateLayout& layout, const SplitFlowConfig& config,
                     std::uint64_t seed)
    : layout_(layout), config_(config) {
  if (layout_.size() == 0) throw ConfigError("flow: empty coordinate layout");
  if (config_.dihedral_base == BaseKind::kGaussian) {
    throw ConfigError("flow: dihedral base must be uniform or von_mises");
  }
  config_.conditioner.validate();
  base_ = BaseDistribution::for_layout(layout_, config_.dihedral_base, config_.von_mises_kappa);

  const std::vector<std::size_t> bb = layout_.backbone_indices();
  const std::vector<std::size_t> sc = layout_.sidechain_indices();
  n_backbone_ = bb.size();
  // Backbone coordinates are the leading block of the canonical layout.
  for (std::size_t i = 0; i < bb.size(); ++i) {
    if (bb[i] != i) throw ConfigError("flow: layout is not in canonical order");
  }
  if (config_.backbone_blocks > 0 && bb.empty()) {
    throw ConfigError("flow: backbone stack configured but no backbone coordinates");
  }

  Rng rng(seed);
  Rng init_rng = rng.split(1);
  Rng mask_rng = rng.split(2);

  const std::vector<int> residues = layout_.residues();
  pos_ = std::make_unique<PositionalScheme>(config_.conditioner, residues.size(), init_rng);

  auto permuted = [&](std::size_t n, bool identity) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (!identity) {
      for (std::size_t i = n; i > 1; --i) {
        std::size_t j = mask_rng.below(i);
        std::swap(order[i - 1], order[j]);
      }
    }
    return order;
  };

  std::set<std::size_t> covered;  // global coordinate ids transformed anywhere

  auto build_stack = [&](const std::vector<std::size_t>& universe, std::size_t blocks,
                         const char* name, bool joint) {
    std::vector<CouplingLayer> stack;
    if (universe.empty() || blocks == 0) return stack;
    StackLayout sl = StackLayout::build(layout_, universe);
    std::vector<std::size_t> pair_order;
    for (std::size_t l = 0; l < blocks; ++l) {
      std::vector<std::size_t> a, b;
      const bool sc_first = joint && l == 0 && !sc.empty();
      if (sc_first) {
        // side chains conditioned on the backbone channel
        for (std::size_t p = 0; p < universe.size(); ++p) {
          if (layout_.coords[universe[p]].role == CoordRole::kSidechainDihedral) {
            b.push_back(p);
          } else {
            a.push_back(p);
          }
        }
      } else {
        // Blocks pair up: both halves of one seeded permutation get
        // transformed before the next permutation, so any two consecutive
        // blocks cover the whole stack.
        const std::size_t start = (joint && !sc.empty()) ? 1 : 0;
        const std::size_t pair = (l - start) / 2;
        const std::size_t parity = (l - start) % 2;
        if (parity == 0) pair_order = permuted(universe.size(), pair == 0);
        const std::size_t half = (universe.size() + 1) / 2;
        for (std::size_t p = 0; p < universe.size(); ++p) {
          const bool in_front = p < half;
          const bool transform = (parity == 0) ? !in_front : in_front;
          (transform ? b : a).push_back(pair_order[p]);
        }
      }
      if (a.empty() || b.empty()) {
        throw ConfigError(std::string("flow: degenerate mask in ") + name + " stack");
      }
      for (std::size_t p : b) covered.insert(universe[p]);
      stack.emplace_back(std::string(name) + std::to_string(l), sl, a, b, config_.conditioner,
                         config_.bins, pos_.get(), init_rng);
    }
    return stack;
  };

  std::vector<std::size_t> all(layout_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  backbone_ = build_stack(bb, config_.backbone_blocks, "bb", false);
  joint_ = build_stack(all, config_.joint_blocks, "joint", true);

  // Coverage: with any blocks present, every coordinate must be transformed
  // somewhere. A zero-depth joint stack legitimately leaves side chains at
  // their base distribution.
  if (config_.backbone_blocks + config_.joint_blocks > 0) {
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      if (covered.count(i)) continue;
      const bool sidechain = layout_.coords[i].role == CoordRole::kSidechainDihedral;
      if (sidechain && config_.joint_blocks == 0) continue;
      throw ConfigError("flow: mask coverage violated (coordinate " + std::to_string(i) +
                        " is never transformed)");
    }
  }
}

std::vector<ad::Parameter*> SplitFlow::parameters() {
  std::vector<ad::Parameter*> out;
  for (ad::Parameter* p : pos_->parameters()) out.push_back(p);
  for (CouplingLayer& l : backbone_) {
    for (ad::Parameter* p : l.parameters()) out.push_back(p);
  }
  for (CouplingLayer& l : joint_) {
    for (ad::Parameter* p : l.parameters()) out.push_back(p);
  }
  return out;
}

std::size_t SplitFlow::parameter_count() {
  std::size_t n = 0;
  for (ad::Parameter* p : parameters()) n += p->value.size();
  return n;
}

Tensor SplitFlow::normalize(const Tensor& x) const {
  const std::size_t b = x.dim(0);
  std::vector<Tensor> cols;
  cols.reserve(layout_.size());
  for (std::size_t j = 0; j < layout_.size(); ++j) {
    Tensor col = ad::slice(x, 1, j, 1);
    const CoordInfo& c = layout_.coords[j];
    if (c.kind == CoordKind::kBoundedAngle) {
      const double mid = 0.5 * (c.lo + c.hi), half = 0.5 * (c.hi - c.lo);
      col = (col - Tensor(mid)) / Tensor(half);
    }
    cols.push_back(col);
  }
  (void)b;
  return ad::concat(cols, 1);
}

Tensor SplitFlow::denormalize(const Tensor& u) const {
  std::vector<Tensor> cols;
  cols.reserve(layout_.size());
  for (std::size_t j = 0; j < layout_.size(); ++j) {
    Tensor col = ad::slice(u, 1, j, 1);
    const CoordInfo& c = layout_.coords[j];
    if (c.kind == CoordKind::kBoundedAngle) {
      const double mid = 0.5 * (c.lo + c.hi), half = 0.5 * (c.hi - c.lo);
      col = col * Tensor(half) + Tensor(mid);
    }
    cols.push_back(col);
  }
  return ad::concat(cols, 1);
}

double SplitFlow::normalization_logdet() const {
  double s = 0.0;
  for (const CoordInfo& c : layout_.coords) {
    if (c.kind == CoordKind::kBoundedAngle) s += std::log(2.0 / (c.hi - c.lo));
  }
  return s;
}

std::pair<Tensor, Tensor> SplitFlow::pull_back(const Tensor& x, FlowCtx ctx) {
  if (x.rank() != 2 || x.dim(1) != layout_.size()) {
    throw NumericError("flow pull_back expects (batch, dim)");
  }
  const std::size_t b = x.dim(0);
  // circular coordinates wrap inside the splines; bounded coordinates rely
  // on the linear tails
  Tensor u = normalize(x);
  Tensor logdet = Tensor::zeros({b});

  for (auto it = joint_.rbegin(); it != joint_.rend(); ++it) {
    auto [next, ld] = it->inverse(u, ctx);
    u = next;
    logdet = logdet + ld;
  }
  if (!backbone_.empty()) {
    Tensor u_bb = ad::slice(u, 1, 0, n_backbone_);
    Tensor u_sc = layout_.size() > n_backbone_
                      ? ad::slice(u, 1, n_backbone_, layout_.size() - n_backbone_)
                      : Tensor::zeros({b, 0});
    for (auto it = backbone_.rbegin(); it != backbone_.rend(); ++it) {
      auto [next, ld] = it->inverse(u_bb, ctx);
      u_bb = next;
      logdet = logdet + ld;
    }
    u = layout_.size() > n_backbone_ ? ad::concat({u_bb, u_sc}, 1) : u_bb;
  }
  return {u, logdet + Tensor(normalization_logdet())};
}

Tensor SplitFlow::log_prob(const Tensor& x, FlowCtx ctx) {
  auto [z, logdet] = pull_back(x, ctx);
  return base_.log_prob(z) + logdet;
}

std::pair<Tensor, Tensor> SplitFlow::push_forward(const Tensor& z, FlowCtx ctx) {
  if (z.rank() != 2 || z.dim(1) != layout_.size()) {
    throw NumericError("flow push_forward expects (batch, dim)");
  }
  const std::size_t b = z.dim(0);
  Tensor logdet = Tensor::zeros({b});
  Tensor u = z;
  if (!backbone_.empty()) {
    Tensor u_bb = ad::slice(z, 1, 0, n_backbone_);
    Tensor u_sc = layout_.size() > n_backbone_
                      ? ad::slice(z, 1, n_backbone_, layout_.size() - n_backbone_)
                      : Tensor::zeros({b, 0});
    for (const CouplingLayer& l : backbone_) {
      auto [next, ld] = l.forward(u_bb, ctx);
      u_bb = next;
      logdet = logdet + ld;
    }
    u = layout_.size() > n_backbone_ ? ad::concat({u_bb, u_sc}, 1) : u_bb;
  }
  for (const CouplingLayer& l : joint_) {
    auto [next, ld] = l.forward(u, ctx);
    u = next;
    logdet = logdet + ld;
  }
  Tensor x = denormalize(u);
  // total log|det dx/dz| includes the constant denormalization part
  return {x, logdet - Tensor(normalization_logdet())};
}

SampleResult SplitFlow::sample(std::size_t n, Rng& rng, FlowCtx ctx) {
  SampleResult res;
  res.z = base_.sample(n, rng);
  auto [x, logdet] = push_forward(ctx.tape ? ctx.tape->constant(res.z) : res.z, ctx);
  res.x = x;
  res.forward_logdet = logdet;
  res.log_prob = base_.log_prob(res.z) - logdet;
  return res;
}

std::unique_ptr<SplitFlow> build_split_flow(const CoordinateLayout& layout,
                                            const SplitFlowConfig& config, std::uint64_t seed) {
  return std::make_unique<SplitFlow>(layout, config, seed);
}

std::unique_ptr<SplitFlow> build_split_flow(const Topology& topology,
                                            const SplitFlowConfig& config, std::uint64_t seed) {
  return std::make_unique<SplitFlow>(CoordinateLayout::from_topology(topology), config, seed);
}

}  // namespace bgic
