// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bgic/tensor.hpp"

namespace bgic::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kExp,
  kLog,
  kSqrt,
  kSin,
  kCos,
  kAtan2,
  kErf,
  kSoftplus,
  kSigmoid,
  kSilu,
  kSum,
  kSumAxis,
  kMean,
  kMeanAxis,
  kBroadcast,
  kSlice,
  kConcat,
  kTranspose,
  kMatmul,
  kSymeigVals,
  kSymeigVecs,
  kGather,
  kGatherRows,
  kWhere,
  kCumsum,
  kReshape,
};

struct Node {
  OpKind kind;
  std::vector<int> inputs;
  Tensor value;                    // saved forward activation
  Tensor aux;                      // op-specific saved tensor (mask, eig partner)
  std::vector<std::int64_t> meta;  // op-specific attributes (axis, slice, indices)
};

// A named persistent tensor. Values live across training steps; each step
// lifts the parameter onto a fresh tape via Tape::use().
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
};

class Tape;

// Gradient of a scalar loss with respect to every reachable node.
class Gradients {
 public:
  bool has(int node) const {
    return node >= 0 && node < static_cast<int>(grads_.size()) && !grads_[node].data().empty();
  }
  const Tensor& at_node(int node) const;
  const Tensor& at(const Tensor& leaf) const { return at_node(leaf.node); }
  // Zero tensor when the parameter was never used on the tape.
  Tensor at(const Parameter& p) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  const Tape* tape_ = nullptr;
};

// Ordered record of primitive ops. Topological by construction: an op's
// inputs always precede it. Single-threaded; rebuilt every step.
class Tape {
 public:
  Tensor leaf(const Tensor& value);
  Tensor constant(const Tensor& value);

  // Memoized leaf per parameter: repeated use on one tape shares a node so
  // gradients from every use accumulate.
  Tensor use(Parameter& p);

  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(int i) const { return nodes_[i]; }
  int node_of(const Parameter& p) const;

 private:
  friend Tensor record_unary(OpKind, const Tensor&, Tensor, Tensor, std::vector<std::int64_t>);
  friend Tensor record_binary(OpKind, const Tensor&, const Tensor&, Tensor, Tensor,
                              std::vector<std::int64_t>);
  friend Tensor record_nary(OpKind, const std::vector<Tensor>&, Tensor,
                            std::vector<std::int64_t>);
  friend std::pair<Tensor, Tensor> symeig(const Tensor&);

  int push(Node n);
  int intern(const Tensor& t);  // node id for an operand, interning constants

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

// ---- primitive forward ops ----
// Eager when no operand carries a tape handle; recorded otherwise.
// Elementwise binary ops require equal shapes, or a scalar on either side.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor atan2(const Tensor& y, const Tensor& x);
Tensor erf(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

// Right-aligned broadcast; expanded dims must be 1 in the input.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Swaps the last two axes (rank 2 or 3).
Tensor transpose(const Tensor& a);
// (m,k)x(k,n); batched (B,m,k)x(B,k,n); mixed (B,m,k)x(k,n).
Tensor matmul(const Tensor& a, const Tensor& b);

// Eigendecomposition of a symmetric matrix: (eigenvalues ascending,
// eigenvectors as columns). Backward clamps eigen-gap denominators at 1e-9
// and symmetrizes the input gradient.
std::pair<Tensor, Tensor> symeig(const Tensor& a);

// out[i] = a.flat[idx[i]]; idx fixed at forward time. VJP scatter-adds.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_idx, Shape out_shape);

// Block gather: the input is viewed as contiguous blocks of width
// out_shape.back(); block i of the output copies input block block_idx[i].
// One index per block instead of one per element.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& block_idx, Shape out_shape);

// Elementwise select by a constant 0/1 mask (same shape as the operands).
// The mask is data, not a differentiable input.
Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b);

// Inclusive cumulative sum along the last axis.
Tensor cumsum(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- detached helpers (forward-time data, no gradient path) ----

// Per-slice maximum over the last axis, detached from the tape.
Tensor reduce_max_detached(const Tensor& a, std::size_t axis);
// 0/1 mask tensors built from values.
Tensor mask_gt(const Tensor& a, double c);
Tensor mask_lt(const Tensor& a, double c);
Tensor mask_abs_gt(const Tensor& a, double c);

// Numerically stable softmax along the last axis (composed from primitives).
Tensor softmax_lastaxis(const Tensor& a);

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8)
// for a scalar-valued function of one tensor.
double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Tensor& x, double h);

}  // namespace bgic::ad
