// SPDX-License-Identifier: Apache-2.0
#include "bgic/tape.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "bgic/errors.hpp"

namespace bgic::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool debug_finite_checks = false;

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Tape* tape_of(const Tensor& a, const Tensor& b) {
  if (a.tape && b.tape && a.tape != b.tape) {
    throw NumericError("operands belong to different tapes");
  }
  return a.tape ? a.tape : b.tape;
}

void require_same_or_scalar(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || a.is_scalar() || b.is_scalar()) return;
  throw NumericError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// Strides around one axis: flat = (o * n + k) * inner + i.
struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw NumericError("axis out of range");
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

void set_debug_finite_checks(bool on);
void set_debug_finite_checks(bool on) { debug_finite_checks = on; }

// ---------------------------------------------------------------------------
// Tape plumbing

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::intern(const Tensor& t) {
  if (t.node >= 0) {
    if (t.tape != this) throw NumericError("operand belongs to a different tape");
    return t.node;
  }
  Node n;
  n.kind = OpKind::kConst;
  n.value = t;
  return push(std::move(n));
}

Tensor Tape::leaf(const Tensor& value) {
  Node n;
  n.kind = OpKind::kLeaf;
  n.value = value.detached();
  int id = push(std::move(n));
  Tensor out = nodes_[id].value;
  out.node = id;
  out.tape = this;
  return out;
}

Tensor Tape::constant(const Tensor& value) {
  Node n;
  n.kind = OpKind::kConst;
  n.value = value.detached();
  int id = push(std::move(n));
  Tensor out = nodes_[id].value;
  out.node = id;
  out.tape = this;
  return out;
}

Tensor Tape::use(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) {
    Tensor out = nodes_[it->second].value;
    out.node = it->second;
    out.tape = this;
    return out;
  }
  Tensor out = leaf(p.value);
  param_nodes_.emplace(&p, out.node);
  return out;
}

int Tape::node_of(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  return it == param_nodes_.end() ? -1 : it->second;
}

const Tensor& Gradients::at_node(int node) const {
  if (!has(node)) throw NumericError("no gradient recorded for node");
  return grads_[node];
}

Tensor Gradients::at(const Parameter& p) const {
  const int node = tape_ ? tape_->node_of(p) : -1;
  if (node < 0 || !has(node)) return Tensor::zeros(p.value.shape());
  return grads_[node];
}

// ---------------------------------------------------------------------------
// Recording helpers

Tensor record_unary(OpKind kind, const Tensor& a, Tensor value, Tensor aux,
                    std::vector<std::int64_t> meta) {
  if (debug_finite_checks) value.check_finite("forward op output");
  if (!a.tape) return value;
  Tape* t = a.tape;
  Node n;
  n.kind = kind;
  n.inputs = {t->intern(a)};
  n.value = value.detached();
  n.aux = std::move(aux);
  n.meta = std::move(meta);
  int id = t->push(std::move(n));
  value.node = id;
  value.tape = t;
  return value;
}

Tensor record_binary(OpKind kind, const Tensor& a, const Tensor& b, Tensor value,
                     Tensor aux, std::vector<std::int64_t> meta) {
  if (debug_finite_checks) value.check_finite("forward op output");
  Tape* t = tape_of(a, b);
  if (!t) return value;
  Node n;
  n.kind = kind;
  n.inputs = {t->intern(a), t->intern(b)};
  n.value = value.detached();
  n.aux = std::move(aux);
  n.meta = std::move(meta);
  int id = t->push(std::move(n));
  value.node = id;
  value.tape = t;
  return value;
}

Tensor record_nary(OpKind kind, const std::vector<Tensor>& parts, Tensor value,
                   std::vector<std::int64_t> meta) {
  if (debug_finite_checks) value.check_finite("forward op output");
  Tape* t = nullptr;
  for (const Tensor& p : parts) {
    if (p.tape) {
      if (t && t != p.tape) throw NumericError("operands belong to different tapes");
      t = p.tape;
    }
  }
  if (!t) return value;
  Node n;
  n.kind = kind;
  n.inputs.reserve(parts.size());
  for (const Tensor& p : parts) n.inputs.push_back(t->intern(p));
  n.value = value.detached();
  n.meta = std::move(meta);
  int id = t->push(std::move(n));
  value.node = id;
  value.tape = t;
  return value;
}

// ---------------------------------------------------------------------------
// Elementwise forward

namespace {

template <class F>
Tensor ew_binary(const Tensor& a, const Tensor& b, const char* name, F&& f) {
  require_same_or_scalar(a, b, name);
  const bool as = a.is_scalar() && !b.is_scalar();
  const bool bs = b.is_scalar() && !a.is_scalar();
  const Shape& shape = as ? b.shape() : a.shape();
  std::vector<double> out(numel(shape));
  if (as) {
    const double av = a[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av, b[i]);
  } else if (bs) {
    const double bv = b[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], bv);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  }
  return Tensor(shape, std::move(out));
}

template <class F>
Tensor ew_unary(const Tensor& a, F&& f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return record_binary(OpKind::kAdd, a, b,
                       ew_binary(a, b, "add", [](double x, double y) { return x + y; }), {}, {});
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return record_binary(OpKind::kSub, a, b,
                       ew_binary(a, b, "sub", [](double x, double y) { return x - y; }), {}, {});
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return record_binary(OpKind::kMul, a, b,
                       ew_binary(a, b, "mul", [](double x, double y) { return x * y; }), {}, {});
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw NumericError("division by zero");
  }
  return record_binary(OpKind::kDiv, a, b,
                       ew_binary(a, b, "div", [](double x, double y) { return x / y; }), {}, {});
}

Tensor neg(const Tensor& a) {
  return record_unary(OpKind::kNeg, a, ew_unary(a, [](double x) { return -x; }), {}, {});
}

Tensor exp(const Tensor& a) {
  return record_unary(OpKind::kExp, a, ew_unary(a, [](double x) { return std::exp(x); }), {}, {});
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (v <= 0.0) throw NumericError("log of non-positive input");
  }
  return record_unary(OpKind::kLog, a, ew_unary(a, [](double x) { return std::log(x); }), {}, {});
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.data()) {
    if (v < 0.0) throw NumericError("sqrt of negative input");
  }
  return record_unary(OpKind::kSqrt, a, ew_unary(a, [](double x) { return std::sqrt(x); }), {},
                      {});
}

Tensor sin(const Tensor& a) {
  return record_unary(OpKind::kSin, a, ew_unary(a, [](double x) { return std::sin(x); }), {}, {});
}

Tensor cos(const Tensor& a) {
  return record_unary(OpKind::kCos, a, ew_unary(a, [](double x) { return std::cos(x); }), {}, {});
}

Tensor atan2(const Tensor& y, const Tensor& x) {
  return record_binary(
      OpKind::kAtan2, y, x,
      ew_binary(y, x, "atan2", [](double yy, double xx) { return std::atan2(yy, xx); }), {}, {});
}

Tensor erf(const Tensor& a) {
  return record_unary(OpKind::kErf, a, ew_unary(a, [](double x) { return std::erf(x); }), {}, {});
}

Tensor softplus(const Tensor& a) {
  return record_unary(OpKind::kSoftplus, a, ew_unary(a, stable_softplus), {}, {});
}

Tensor sigmoid(const Tensor& a) {
  return record_unary(OpKind::kSigmoid, a, ew_unary(a, stable_sigmoid), {}, {});
}

Tensor silu(const Tensor& a) {
  return record_unary(OpKind::kSilu, a,
                      ew_unary(a, [](double x) { return x * stable_sigmoid(x); }), {}, {});
}

// ---------------------------------------------------------------------------
// Reductions / structure

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record_unary(OpKind::kSum, a, Tensor(s), {}, {});
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit ax = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t o = 0; o < ax.outer; ++o) {
    for (std::size_t k = 0; k < ax.n; ++k) {
      const double* src = a.raw() + (o * ax.n + k) * ax.inner;
      double* dst = out.raw() + o * ax.inner;
      for (std::size_t i = 0; i < ax.inner; ++i) dst[i] += src[i];
    }
  }
  return record_unary(OpKind::kSumAxis, a, std::move(out), {},
                      {static_cast<std::int64_t>(axis)});
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw NumericError("mean of empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  return record_unary(OpKind::kMean, a, Tensor(s / static_cast<double>(a.size())), {}, {});
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const AxisSplit ax = split_axis(a.shape(), axis);
  if (ax.n == 0) throw NumericError("mean over empty axis");
  Tensor s = sum(a.detached(), axis);
  for (double& v : s.data()) v /= static_cast<double>(ax.n);
  return record_unary(OpKind::kMeanAxis, a, std::move(s), {},
                      {static_cast<std::int64_t>(axis)});
}

namespace {

// Per-target-dim source strides under right-aligned broadcasting
// (0 where the source dim is expanded).
std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to) {
  const std::size_t pad = to.size() - from.size();
  std::vector<std::size_t> strides(to.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    strides[i + pad] = from[i] == 1 ? 0 : stride;
    stride *= from[i];
  }
  return strides;
}

// Odometer walk over `to`, invoking f(target_flat, source_flat).
template <class F>
void broadcast_walk(const Shape& from, const Shape& to, F&& f) {
  const std::vector<std::size_t> strides = broadcast_strides(from, to);
  std::vector<std::size_t> counter(to.size(), 0);
  const std::size_t total = numel(to);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    f(flat, src);
    for (std::size_t i = to.size(); i-- > 0;) {
      ++counter[i];
      src += strides[i];
      if (counter[i] < to[i]) break;
      counter[i] = 0;
      src -= strides[i] * to[i];
    }
  }
}

}  // namespace

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (a.rank() > shape.size()) {
    throw NumericError("broadcast_to: rank decrease " + shape_str(a.shape()) + " -> " +
                       shape_str(shape));
  }
  const std::size_t pad = shape.size() - a.rank();
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != shape[i + pad] && a.dim(i) != 1) {
      throw NumericError("broadcast_to: incompatible " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
    }
  }
  Tensor out = Tensor::zeros(shape);
  broadcast_walk(a.shape(), shape,
                 [&](std::size_t flat, std::size_t src) { out[flat] = a[src]; });
  return record_unary(OpKind::kBroadcast, a, std::move(out), {}, {});
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel(shape) != a.size()) {
    throw NumericError("reshape: size mismatch " + shape_str(a.shape()) + " -> " +
                       shape_str(shape));
  }
  Tensor out(shape, a.data());
  return record_unary(OpKind::kReshape, a, std::move(out), {}, {});
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  const AxisSplit ax = split_axis(a.shape(), axis);
  if (start + len > ax.n) throw NumericError("slice out of range");
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t o = 0; o < ax.outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const double* src = a.raw() + (o * ax.n + start + k) * ax.inner;
      double* dst = out.raw() + (o * len + k) * ax.inner;
      std::copy(src, src + ax.inner, dst);
    }
  }
  return record_unary(OpKind::kSlice, a, std::move(out), {},
                      {static_cast<std::int64_t>(axis), static_cast<std::int64_t>(start),
                       static_cast<std::int64_t>(len)});
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw NumericError("concat of zero parts");
  Shape out_shape = parts[0].shape();
  if (axis >= out_shape.size()) throw NumericError("concat axis out of range");
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw NumericError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) throw NumericError("concat shape mismatch");
    }
    total += s[axis];
  }
  out_shape[axis] = total;
  Tensor out = Tensor::zeros(out_shape);
  const AxisSplit oax = split_axis(out_shape, axis);
  std::size_t offset = 0;
  std::vector<std::int64_t> meta{static_cast<std::int64_t>(axis)};
  for (const Tensor& p : parts) {
    const AxisSplit pax = split_axis(p.shape(), axis);
    for (std::size_t o = 0; o < pax.outer; ++o) {
      for (std::size_t k = 0; k < pax.n; ++k) {
        const double* src = p.raw() + (o * pax.n + k) * pax.inner;
        double* dst = out.raw() + (o * oax.n + offset + k) * oax.inner;
        std::copy(src, src + pax.inner, dst);
      }
    }
    offset += pax.n;
    meta.push_back(static_cast<std::int64_t>(pax.n));
  }
  return record_nary(OpKind::kConcat, parts, std::move(out), std::move(meta));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() == 2) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    MutMap(out.raw(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)) =
        ConstMap(a.raw(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n))
            .transpose();
    return record_unary(OpKind::kTranspose, a, std::move(out), {}, {});
  }
  if (a.rank() == 3) {
    const std::size_t B = a.dim(0), m = a.dim(1), n = a.dim(2);
    Tensor out = Tensor::zeros({B, n, m});
    for (std::size_t b = 0; b < B; ++b) {
      MutMap(out.raw() + b * m * n, static_cast<Eigen::Index>(n),
             static_cast<Eigen::Index>(m)) =
          ConstMap(a.raw() + b * m * n, static_cast<Eigen::Index>(m),
                   static_cast<Eigen::Index>(n))
              .transpose();
    }
    return record_unary(OpKind::kTranspose, a, std::move(out), {}, {});
  }
  throw NumericError("transpose expects rank 2 or 3");
}

namespace {

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  if (a.rank() == 2 && b.rank() == 2) {
    if (a.dim(1) != b.dim(0)) throw NumericError("matmul: inner dim mismatch");
    Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
    MutMap(out.raw(), idx(a.dim(0)), idx(b.dim(1))).noalias() =
        ConstMap(a.raw(), idx(a.dim(0)), idx(a.dim(1))) *
        ConstMap(b.raw(), idx(b.dim(0)), idx(b.dim(1)));
    return out;
  }
  if (a.rank() == 3 && b.rank() == 2) {
    if (a.dim(2) != b.dim(0)) throw NumericError("matmul: inner dim mismatch");
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor out = Tensor::zeros({B, m, n});
    // One flattened GEMM: (B*m, k) x (k, n).
    MutMap(out.raw(), idx(B * m), idx(n)).noalias() =
        ConstMap(a.raw(), idx(B * m), idx(k)) * ConstMap(b.raw(), idx(k), idx(n));
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
      throw NumericError("matmul: batched shape mismatch");
    }
    const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor out = Tensor::zeros({B, m, n});
    for (std::size_t i = 0; i < B; ++i) {
      MutMap(out.raw() + i * m * n, idx(m), idx(n)).noalias() =
          ConstMap(a.raw() + i * m * k, idx(m), idx(k)) *
          ConstMap(b.raw() + i * k * n, idx(k), idx(n));
    }
    return out;
  }
  throw NumericError("matmul expects (2,2), (3,2) or (3,3) ranks");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  return record_binary(OpKind::kMatmul, a, b, matmul_value(a, b), {}, {});
}

std::pair<Tensor, Tensor> symeig(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw NumericError("symeig expects a square matrix");
  }
  const std::size_t n = a.dim(0);
  double scale = 1e-12;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a[i * n + j] - a[j * n + i]) > 1e-8 * scale) {
        throw NumericError("symeig: input is not symmetric");
      }
    }
  }
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          0.5 * (a[i * n + j] + a[j * n + i]);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  if (solver.info() != Eigen::Success) throw NumericError("symeig failed to converge");

  Tensor vals = Tensor::zeros({n});
  Tensor vecs = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    vals[i] = solver.eigenvalues()(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < n; ++j) {
      vecs[i * n + j] =
          solver.eigenvectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }

  if (!a.tape) return {vals, vecs};
  Tape* t = a.tape;
  const int src = t->intern(a);

  Node nv;
  nv.kind = OpKind::kSymeigVals;
  nv.inputs = {src};
  nv.value = vals;
  nv.aux = vecs;
  int vid = t->push(std::move(nv));
  Tensor out_vals = vals;
  out_vals.node = vid;
  out_vals.tape = t;

  Node ne;
  ne.kind = OpKind::kSymeigVecs;
  ne.inputs = {src};
  ne.value = vecs;
  ne.aux = vals;
  int eid = t->push(std::move(ne));
  Tensor out_vecs = vecs;
  out_vecs.node = eid;
  out_vecs.tape = t;

  return {out_vals, out_vecs};
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_idx, Shape out_shape) {
  if (numel(out_shape) != flat_idx.size()) {
    throw NumericError("gather: index count does not match output shape");
  }
  std::vector<double> out(flat_idx.size());
  for (std::size_t i = 0; i < flat_idx.size(); ++i) {
    if (flat_idx[i] >= a.size()) throw NumericError("gather index out of range");
    out[i] = a[flat_idx[i]];
  }
  std::vector<std::int64_t> meta(flat_idx.begin(), flat_idx.end());
  return record_unary(OpKind::kGather, a, Tensor(std::move(out_shape), std::move(out)), {},
                      std::move(meta));
}

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& block_idx, Shape out_shape) {
  if (out_shape.empty()) throw NumericError("gather_rows: output must have a trailing axis");
  const std::size_t width = out_shape.back();
  if (width == 0 || numel(out_shape) != block_idx.size() * width) {
    throw NumericError("gather_rows: index count does not match output shape");
  }
  if (a.size() % width != 0) throw NumericError("gather_rows: input not divisible into blocks");
  const std::size_t blocks = a.size() / width;
  std::vector<double> out(block_idx.size() * width);
  for (std::size_t i = 0; i < block_idx.size(); ++i) {
    if (block_idx[i] >= blocks) throw NumericError("gather_rows index out of range");
    std::copy(a.raw() + block_idx[i] * width, a.raw() + (block_idx[i] + 1) * width,
              out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<std::int64_t> meta(block_idx.begin(), block_idx.end());
  return record_unary(OpKind::kGatherRows, a, Tensor(std::move(out_shape), std::move(out)), {},
                      std::move(meta));
}

Tensor where(const Tensor& mask, const Tensor& a, const Tensor& b) {
  require_same_or_scalar(mask, a, "where");
  require_same_or_scalar(mask, b, "where");
  const Shape& shape = mask.shape();
  std::vector<double> out(numel(shape));
  const bool as = a.is_scalar() && numel(shape) != 1;
  const bool bs = b.is_scalar() && numel(shape) != 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i] != 0.0 ? (as ? a[0] : a[i]) : (bs ? b[0] : b[i]);
  }
  return record_binary(OpKind::kWhere, a, b, Tensor(shape, std::move(out)), mask.detached(),
                       {});
}

Tensor cumsum(const Tensor& a) {
  if (a.rank() == 0) return a;
  const std::size_t L = a.dim(a.rank() - 1);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t rows = L == 0 ? 0 : a.size() / L;
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < L; ++j) {
      acc += a[r * L + j];
      out[r * L + j] = acc;
    }
  }
  return record_unary(OpKind::kCumsum, a, std::move(out), {}, {});
}

// ---------------------------------------------------------------------------
// Detached helpers

Tensor reduce_max_detached(const Tensor& a, std::size_t axis) {
  const AxisSplit ax = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = Tensor::full(out_shape, -std::numeric_limits<double>::infinity());
  for (std::size_t o = 0; o < ax.outer; ++o) {
    for (std::size_t k = 0; k < ax.n; ++k) {
      const double* src = a.raw() + (o * ax.n + k) * ax.inner;
      double* dst = out.raw() + o * ax.inner;
      for (std::size_t i = 0; i < ax.inner; ++i) dst[i] = std::max(dst[i], src[i]);
    }
  }
  return out;
}

Tensor mask_gt(const Tensor& a, double c) {
  Tensor m = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] > c ? 1.0 : 0.0;
  return m;
}

Tensor mask_lt(const Tensor& a, double c) {
  Tensor m = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] < c ? 1.0 : 0.0;
  return m;
}

Tensor mask_abs_gt(const Tensor& a, double c) {
  Tensor m = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = std::abs(a[i]) > c ? 1.0 : 0.0;
  return m;
}

Tensor softmax_lastaxis(const Tensor& a) {
  const std::size_t last = a.rank() - 1;
  Tensor shift = reduce_max_detached(a, last);
  Shape keep = shift.shape();
  keep.push_back(1);
  Tensor e = exp(a - broadcast_to(Tensor(keep, shift.data()), a.shape()));
  Tensor denom = sum(e, last);
  Shape dk = denom.shape();
  dk.push_back(1);
  return e / broadcast_to(reshape(denom, dk), a.shape());
}

// ---------------------------------------------------------------------------
// Backward

Gradients Tape::backward(const Tensor& loss) {
  if (loss.tape != this || loss.node < 0) throw NumericError("backward: detached graph");
  if (loss.size() != 1) throw NumericError("backward: loss is not scalar");

  Gradients out;
  out.tape_ = this;
  out.grads_.assign(nodes_.size(), Tensor());
  auto& bar = out.grads_;
  bar[loss.node] = Tensor::ones(nodes_[loss.node].value.shape());

  auto accum = [&](int target, const Tensor& contrib) {
    const Tensor& tv = nodes_[target].value;
    Tensor reduced;
    const Tensor* src = &contrib;
    if (contrib.shape() != tv.shape()) {
      // Scalar operands lifted to full shape: fold the gradient back down.
      if (tv.size() != 1) throw NumericError("backward: gradient shape mismatch");
      double s = 0.0;
      for (double v : contrib.data()) s += v;
      reduced = Tensor(tv.shape(), std::vector<double>{s});
      src = &reduced;
    }
    if (bar[target].data().empty()) {
      bar[target] = *src;
    } else {
      for (std::size_t i = 0; i < src->size(); ++i) bar[target][i] += (*src)[i];
    }
  };

  auto in_val = [&](const Node& n, std::size_t i) -> const Tensor& {
    return nodes_[n.inputs[i]].value;
  };

  for (int i = loss.node; i >= 0; --i) {
    if (bar[i].data().empty()) continue;
    const Node& n = nodes_[i];
    const Tensor& g = bar[i];
    switch (n.kind) {
      case OpKind::kLeaf:
      case OpKind::kConst:
        break;
      case OpKind::kAdd: {
        accum(n.inputs[0], g);
        accum(n.inputs[1], g);
        break;
      }
      case OpKind::kSub: {
        accum(n.inputs[0], g);
        Tensor gb = g;
        for (double& v : gb.data()) v = -v;
        accum(n.inputs[1], gb);
        break;
      }
      case OpKind::kMul: {
        accum(n.inputs[0],
              ew_binary(g, in_val(n, 1), "mul_bwd", [](double x, double y) { return x * y; }));
        accum(n.inputs[1],
              ew_binary(g, in_val(n, 0), "mul_bwd", [](double x, double y) { return x * y; }));
        break;
      }
      case OpKind::kDiv: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        accum(n.inputs[0],
              ew_binary(g, b, "div_bwd", [](double x, double y) { return x / y; }));
        Tensor gb = ew_binary(n.value, b, "div_bwd", [](double o, double y) { return -o / y; });
        accum(n.inputs[1],
              ew_binary(g, gb, "div_bwd", [](double x, double y) { return x * y; }));
        (void)a;
        break;
      }
      case OpKind::kNeg: {
        Tensor ga = g;
        for (double& v : ga.data()) v = -v;
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kExp: {
        accum(n.inputs[0],
              ew_binary(g, n.value, "exp_bwd", [](double x, double o) { return x * o; }));
        break;
      }
      case OpKind::kLog: {
        accum(n.inputs[0],
              ew_binary(g, in_val(n, 0), "log_bwd", [](double x, double a) { return x / a; }));
        break;
      }
      case OpKind::kSqrt: {
        accum(n.inputs[0], ew_binary(g, n.value, "sqrt_bwd",
                                     [](double x, double o) { return x / (2.0 * o); }));
        break;
      }
      case OpKind::kSin: {
        accum(n.inputs[0], ew_binary(g, in_val(n, 0), "sin_bwd",
                                     [](double x, double a) { return x * std::cos(a); }));
        break;
      }
      case OpKind::kCos: {
        accum(n.inputs[0], ew_binary(g, in_val(n, 0), "cos_bwd",
                                     [](double x, double a) { return -x * std::sin(a); }));
        break;
      }
      case OpKind::kAtan2: {
        const Tensor& y = in_val(n, 0);
        const Tensor& x = in_val(n, 1);
        Tensor gy = g, gx = g;
        const bool ys = y.is_scalar() && !x.is_scalar();
        const bool xs = x.is_scalar() && !y.is_scalar();
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double yv = ys ? y[0] : y[j];
          const double xv = xs ? x[0] : x[j];
          const double r2 = xv * xv + yv * yv;
          gy[j] = g[j] * xv / r2;
          gx[j] = -g[j] * yv / r2;
        }
        accum(n.inputs[0], gy);
        accum(n.inputs[1], gx);
        break;
      }
      case OpKind::kErf: {
        constexpr double two_over_sqrt_pi = 1.1283791670955125738961589031215;
        accum(n.inputs[0],
              ew_binary(g, in_val(n, 0), "erf_bwd", [](double x, double a) {
                return x * two_over_sqrt_pi * std::exp(-a * a);
              }));
        break;
      }
      case OpKind::kSoftplus: {
        accum(n.inputs[0], ew_binary(g, in_val(n, 0), "softplus_bwd", [](double x, double a) {
                return x * stable_sigmoid(a);
              }));
        break;
      }
      case OpKind::kSigmoid: {
        accum(n.inputs[0], ew_binary(g, n.value, "sigmoid_bwd", [](double x, double o) {
                return x * o * (1.0 - o);
              }));
        break;
      }
      case OpKind::kSilu: {
        accum(n.inputs[0], ew_binary(g, in_val(n, 0), "silu_bwd", [](double x, double a) {
                const double s = stable_sigmoid(a);
                return x * s * (1.0 + a * (1.0 - s));
              }));
        break;
      }
      case OpKind::kSum: {
        Tensor ga = Tensor::full(in_val(n, 0).shape(), g[0]);
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kSumAxis:
      case OpKind::kMeanAxis: {
        const Tensor& a = in_val(n, 0);
        const std::size_t axis = static_cast<std::size_t>(n.meta[0]);
        const AxisSplit ax = split_axis(a.shape(), axis);
        const double scale =
            n.kind == OpKind::kMeanAxis ? 1.0 / static_cast<double>(ax.n) : 1.0;
        Tensor ga = Tensor::zeros(a.shape());
        for (std::size_t o = 0; o < ax.outer; ++o) {
          for (std::size_t k = 0; k < ax.n; ++k) {
            double* dst = ga.raw() + (o * ax.n + k) * ax.inner;
            const double* src = g.raw() + o * ax.inner;
            for (std::size_t j = 0; j < ax.inner; ++j) dst[j] = src[j] * scale;
          }
        }
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kMean: {
        const double scale = 1.0 / static_cast<double>(in_val(n, 0).size());
        Tensor ga = Tensor::full(in_val(n, 0).shape(), g[0] * scale);
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kBroadcast: {
        const Tensor& a = in_val(n, 0);
        Tensor ga = Tensor::zeros(a.shape());
        broadcast_walk(a.shape(), n.value.shape(),
                       [&](std::size_t flat, std::size_t src) { ga[src] += g[flat]; });
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kReshape: {
        accum(n.inputs[0], Tensor(in_val(n, 0).shape(), g.data()));
        break;
      }
      case OpKind::kSlice: {
        const Tensor& a = in_val(n, 0);
        const std::size_t axis = static_cast<std::size_t>(n.meta[0]);
        const std::size_t start = static_cast<std::size_t>(n.meta[1]);
        const std::size_t len = static_cast<std::size_t>(n.meta[2]);
        const AxisSplit ax = split_axis(a.shape(), axis);
        Tensor ga = Tensor::zeros(a.shape());
        for (std::size_t o = 0; o < ax.outer; ++o) {
          for (std::size_t k = 0; k < len; ++k) {
            double* dst = ga.raw() + (o * ax.n + start + k) * ax.inner;
            const double* src = g.raw() + (o * len + k) * ax.inner;
            for (std::size_t j = 0; j < ax.inner; ++j) dst[j] += src[j];
          }
        }
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kConcat: {
        const std::size_t axis = static_cast<std::size_t>(n.meta[0]);
        const AxisSplit oax = split_axis(n.value.shape(), axis);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < n.inputs.size(); ++p) {
          const Tensor& part = in_val(n, p);
          const AxisSplit pax = split_axis(part.shape(), axis);
          Tensor gp = Tensor::zeros(part.shape());
          for (std::size_t o = 0; o < pax.outer; ++o) {
            for (std::size_t k = 0; k < pax.n; ++k) {
              const double* src = g.raw() + (o * oax.n + offset + k) * oax.inner;
              double* dst = gp.raw() + (o * pax.n + k) * pax.inner;
              std::copy(src, src + pax.inner, dst);
            }
          }
          offset += pax.n;
          accum(n.inputs[p], gp);
        }
        break;
      }
      case OpKind::kTranspose: {
        accum(n.inputs[0], transpose(g.detached()));
        break;
      }
      case OpKind::kMatmul: {
        const Tensor& a = in_val(n, 0);
        const Tensor& b = in_val(n, 1);
        auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
        if (a.rank() == 2 && b.rank() == 2) {
          const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
          Tensor ga = Tensor::zeros(a.shape());
          Tensor gb = Tensor::zeros(b.shape());
          ConstMap G(g.raw(), idx(m), idx(nn));
          MutMap(ga.raw(), idx(m), idx(k)).noalias() =
              G * ConstMap(b.raw(), idx(k), idx(nn)).transpose();
          MutMap(gb.raw(), idx(k), idx(nn)).noalias() =
              ConstMap(a.raw(), idx(m), idx(k)).transpose() * G;
          accum(n.inputs[0], ga);
          accum(n.inputs[1], gb);
        } else if (a.rank() == 3 && b.rank() == 2) {
          const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(1);
          Tensor ga = Tensor::zeros(a.shape());
          Tensor gb = Tensor::zeros(b.shape());
          ConstMap G(g.raw(), idx(B * m), idx(nn));
          MutMap(ga.raw(), idx(B * m), idx(k)).noalias() =
              G * ConstMap(b.raw(), idx(k), idx(nn)).transpose();
          MutMap(gb.raw(), idx(k), idx(nn)).noalias() =
              ConstMap(a.raw(), idx(B * m), idx(k)).transpose() * G;
          accum(n.inputs[0], ga);
          accum(n.inputs[1], gb);
        } else {
          const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2), nn = b.dim(2);
          Tensor ga = Tensor::zeros(a.shape());
          Tensor gb = Tensor::zeros(b.shape());
          for (std::size_t bi = 0; bi < B; ++bi) {
            ConstMap G(g.raw() + bi * m * nn, idx(m), idx(nn));
            MutMap(ga.raw() + bi * m * k, idx(m), idx(k)).noalias() =
                G * ConstMap(b.raw() + bi * k * nn, idx(k), idx(nn)).transpose();
            MutMap(gb.raw() + bi * k * nn, idx(k), idx(nn)).noalias() =
                ConstMap(a.raw() + bi * m * k, idx(m), idx(k)).transpose() * G;
          }
          accum(n.inputs[0], ga);
          accum(n.inputs[1], gb);
        }
        break;
      }
      case OpKind::kSymeigVals: {
        // dA = V diag(g_lambda) V^T (symmetric by construction).
        const std::size_t d = n.value.size();
        const Tensor& V = n.aux;
        Tensor ga = Tensor::zeros({d, d});
        auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
        ConstMap Vm(V.raw(), idx(d), idx(d));
        Eigen::VectorXd gl(idx(d));
        for (std::size_t j = 0; j < d; ++j) gl(idx(j)) = g[j];
        MutMap(ga.raw(), idx(d), idx(d)).noalias() = Vm * gl.asDiagonal() * Vm.transpose();
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kSymeigVecs: {
        // dA = V sym(F o (V^T gV)) V^T with F_ij = 1/(lambda_j - lambda_i),
        // gap clamped at 1e-9 preserving sign.
        const std::size_t d = n.value.dim(0);
        const Tensor& lam = n.aux;
        auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
        ConstMap Vm(n.value.raw(), idx(d), idx(d));
        ConstMap gVm(g.raw(), idx(d), idx(d));
        Eigen::MatrixXd inner = Vm.transpose() * gVm;
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            if (r == c) {
              inner(idx(r), idx(c)) = 0.0;
              continue;
            }
            double gap = lam[c] - lam[r];
            if (std::abs(gap) < 1e-9) gap = gap < 0.0 ? -1e-9 : 1e-9;
            inner(idx(r), idx(c)) /= gap;
          }
        }
        Eigen::MatrixXd da = Vm * inner * Vm.transpose();
        Eigen::MatrixXd sym = 0.5 * (da + da.transpose());
        Tensor ga = Tensor::zeros({d, d});
        for (std::size_t r = 0; r < d; ++r) {
          for (std::size_t c = 0; c < d; ++c) ga[r * d + c] = sym(idx(r), idx(c));
        }
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kGather: {
        Tensor ga = Tensor::zeros(in_val(n, 0).shape());
        for (std::size_t j = 0; j < g.size(); ++j) {
          ga[static_cast<std::size_t>(n.meta[j])] += g[j];
        }
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kGatherRows: {
        const std::size_t width = n.value.shape().back();
        Tensor ga = Tensor::zeros(in_val(n, 0).shape());
        double* dst = ga.raw();
        for (std::size_t i = 0; i < n.meta.size(); ++i) {
          const double* src = g.raw() + i * width;
          double* block = dst + static_cast<std::size_t>(n.meta[i]) * width;
          for (std::size_t k = 0; k < width; ++k) block[k] += src[k];
        }
        accum(n.inputs[0], ga);
        break;
      }
      case OpKind::kWhere: {
        const Tensor& mask = n.aux;
        Tensor ga = g, gb = g;
        for (std::size_t j = 0; j < g.size(); ++j) {
          ga[j] = mask[j] != 0.0 ? g[j] : 0.0;
          gb[j] = mask[j] != 0.0 ? 0.0 : g[j];
        }
        accum(n.inputs[0], ga);
        accum(n.inputs[1], gb);
        break;
      }
      case OpKind::kCumsum: {
        const std::size_t L = n.value.dim(n.value.rank() - 1);
        Tensor ga = Tensor::zeros(n.value.shape());
        const std::size_t rows = L == 0 ? 0 : g.size() / L;
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t j = L; j-- > 0;) {
            acc += g[r * L + j];
            ga[r * L + j] = acc;
          }
        }
        accum(n.inputs[0], ga);
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double finite_diff_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                         const Tensor& x, double h) {
  if (h <= 0.0) throw NumericError("finite_diff_check: step must be positive");
  Tape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(tape, xl);
  if (y.size() != 1 || !y.all_finite()) {
    throw NumericError("finite_diff_check: f(x) is not a finite scalar");
  }
  Gradients grads = tape.backward(y);
  Tensor g = grads.has(xl.node) ? grads.at_node(xl.node) : Tensor::zeros(x.shape());

  auto eval = [&](const Tensor& point) {
    Tape scratch;
    Tensor pl = scratch.leaf(point);
    return f(scratch, pl).scalar();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x.detached();
    Tensor xm = x.detached();
    xp[i] += h;
    xm[i] -= h;
    const double fd = (eval(xp) - eval(xm)) / (2.0 * h);
    const double rel = std::abs(g[i] - fd) / (std::abs(g[i]) + 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace bgic::ad
