#include "edgedepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "edgedepth/params.hpp"

namespace edgedepth {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kConstant: return "constant";
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kReshape: return "reshape";
    case OpKind::kPermute: return "permute";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kSqrt: return "sqrt";
    case OpKind::kScale: return "scale";
    case OpKind::kAddScalar: return "add_scalar";
    case OpKind::kClamp: return "clamp";
    case OpKind::kReduceMax: return "reduce_max";
    case OpKind::kReduceMean: return "reduce_mean";
    case OpKind::kReduceSum: return "reduce_sum";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kGather: return "gather";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kSoftmaxLastDim: return "softmax_lastdim";
    case OpKind::kUpsampleBilinear: return "upsample_bilinear";
  }
  return "?";
}

namespace {

void check_positive_extents(OpKind kind, const Shape& shape) {
  for (int e : shape) {
    if (e < 1) {
      throw ShapeError(std::string(op_name(kind)) + ": non-positive extent in " +
                       shape_str(shape));
    }
  }
}

// Sum of |x| is finite iff every element is; one pass, no branches.
void check_finite(OpKind kind, const std::vector<double>& values) {
  double acc = 0.0;
  for (double v : values) acc += std::fabs(v);
  if (!std::isfinite(acc)) {
    throw NumericError(std::string(op_name(kind)) + ": non-finite value produced");
  }
}

void require_same_shape(OpKind kind, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

const Shape& Tensor::shape() const { return graph_->node(*this).shape; }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

bool Tensor::requires_grad() const { return graph_->node(*this).requires_grad; }

std::span<const double> Tensor::values() const {
  const auto& n = graph_->node(*this);
  return {n.values.data(), n.values.size()};
}

std::span<const double> Tensor::grad() const {
  const auto& n = graph_->node(*this);
  if (n.grad.empty()) {
    throw Error("Tensor::grad: no gradient present (backward not run or "
                "tensor does not require grad)");
  }
  return {n.grad.data(), n.grad.size()};
}

double Tensor::scalar() const {
  if (numel() != 1) {
    throw ShapeError("Tensor::scalar: tensor has shape " + shape_str(shape()));
  }
  return values()[0];
}

double Tensor::at(std::span<const int> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) {
    throw ShapeError("Tensor::at: rank mismatch for " + shape_str(s));
  }
  std::int64_t flat = 0;
  for (std::size_t d = 0; d < s.size(); ++d) {
    flat = flat * s[d] + index[d];
  }
  return values()[static_cast<std::size_t>(flat)];
}

// --- Graph: leaves ----------------------------------------------------------

const Graph::Node& Graph::node(const Tensor& t) const {
  return nodes_[static_cast<std::size_t>(t.id_)];
}

Tensor Graph::record(Node node) {
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
  check_positive_extents(OpKind::kConstant, shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("constant: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  check_finite(OpKind::kConstant, values);
  Node n;
  n.kind = OpKind::kConstant;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.requires_grad = false;
  return record(std::move(n));
}

Tensor Graph::constant_scalar(double value) { return constant({1}, {value}); }

Tensor Graph::leaf(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  nodes_.back().kind = OpKind::kLeaf;
  nodes_.back().requires_grad = true;
  return t;
}

Tensor Graph::param(Parameter& p) {
  Tensor t = leaf(p.shape, p.values);
  param_leaves_.emplace_back(t.id_, &p);
  return t;
}

// --- Graph: elementwise ------------------------------------------------------

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  require_same_shape(OpKind::kAdd, a.shape(), b.shape());
  Node n;
  n.kind = OpKind::kAdd;
  n.shape = a.shape();
  n.inputs = {a.id_, b.id_};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  const auto av = a.values(), bv = b.values();
  n.values.resize(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) n.values[i] = av[i] + bv[i];
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  require_same_shape(OpKind::kSub, a.shape(), b.shape());
  Node n;
  n.kind = OpKind::kSub;
  n.shape = a.shape();
  n.inputs = {a.id_, b.id_};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  const auto av = a.values(), bv = b.values();
  n.values.resize(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) n.values[i] = av[i] - bv[i];
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  require_same_shape(OpKind::kMul, a.shape(), b.shape());
  Node n;
  n.kind = OpKind::kMul;
  n.shape = a.shape();
  n.inputs = {a.id_, b.id_};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  const auto av = a.values(), bv = b.values();
  n.values.resize(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) n.values[i] = av[i] * bv[i];
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const int m = sa[0], k = sa[1], nn = sb[1];
  Node n;
  n.kind = OpKind::kMatmul;
  n.shape = {m, nn};
  n.inputs = {a.id_, b.id_};
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.values.assign(static_cast<std::size_t>(m) * nn, 0.0);
  const auto av = a.values(), bv = b.values();
  for (int i = 0; i < m; ++i) {
    for (int l = 0; l < k; ++l) {
      const double aval = av[static_cast<std::size_t>(i) * k + l];
      const double* brow = &bv[static_cast<std::size_t>(l) * nn];
      double* orow = &n.values[static_cast<std::size_t>(i) * nn];
      for (int j = 0; j < nn; ++j) orow[j] += aval * brow[j];
    }
  }
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw ShapeError("concat_channels: no inputs");
  }
  const Shape& first = parts[0].shape();
  int total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() ||
        !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw ShapeError("concat_channels: trailing extents differ, " + shape_str(first) +
                       " vs " + shape_str(s));
    }
    total += s[0];
  }
  Node n;
  n.kind = OpKind::kConcatChannels;
  n.shape = first;
  n.shape[0] = total;
  n.requires_grad = false;
  n.values.reserve(static_cast<std::size_t>(shape_numel(n.shape)));
  for (const Tensor& p : parts) {
    n.inputs.push_back(p.id_);
    n.requires_grad = n.requires_grad || p.requires_grad();
    const auto pv = p.values();
    n.values.insert(n.values.end(), pv.begin(), pv.end());
  }
  return record(std::move(n));
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  check_positive_extents(OpKind::kReshape, shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Node n;
  n.kind = OpKind::kReshape;
  n.shape = std::move(shape);
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  const auto xv = x.values();
  n.values.assign(xv.begin(), xv.end());
  return record(std::move(n));
}

Tensor Graph::transpose(const Tensor& x) {
  if (x.shape().size() != 2) {
    throw ShapeError("transpose: expects rank 2, got " + shape_str(x.shape()));
  }
  return permute(x, {1, 0});
}

Tensor Graph::permute(const Tensor& x, std::vector<int> axes) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (static_cast<int>(axes.size()) != rank) {
    throw ShapeError("permute: axes count " + std::to_string(axes.size()) +
                     " does not match rank of " + shape_str(s));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (int a : axes) {
    if (a < 0 || a >= rank || seen[static_cast<std::size_t>(a)]) {
      throw ShapeError("permute: invalid axis order for " + shape_str(s));
    }
    seen[static_cast<std::size_t>(a)] = true;
  }
  Node n;
  n.kind = OpKind::kPermute;
  n.shape.resize(s.size());
  for (int d = 0; d < rank; ++d) n.shape[d] = s[axes[d]];
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.perm = std::move(axes);

  const auto xv = x.values();
  n.values.resize(xv.size());
  std::vector<std::int64_t> in_strides(s.size(), 1);
  for (int d = rank - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * s[d + 1];
  std::vector<int> idx(s.size(), 0);
  for (std::size_t out = 0; out < xv.size(); ++out) {
    std::int64_t src = 0;
    for (int d = 0; d < rank; ++d) src += idx[d] * in_strides[n.perm[d]];
    n.values[out] = xv[static_cast<std::size_t>(src)];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < n.shape[d]) break;
      idx[d] = 0;
    }
  }
  return record(std::move(n));
}

Tensor Graph::unary_map(OpKind kind, const Tensor& x, double alpha, double beta) {
  Node n;
  n.kind = kind;
  n.shape = x.shape();
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.alpha = alpha;
  n.beta = beta;
  const auto xv = x.values();
  n.values.resize(xv.size());
  switch (kind) {
    case OpKind::kLeakyRelu:
      for (std::size_t i = 0; i < xv.size(); ++i)
        n.values[i] = xv[i] >= 0.0 ? xv[i] : alpha * xv[i];
      break;
    case OpKind::kSigmoid:
      for (std::size_t i = 0; i < xv.size(); ++i) n.values[i] = stable_sigmoid(xv[i]);
      break;
    case OpKind::kLog:
      for (std::size_t i = 0; i < xv.size(); ++i) n.values[i] = std::log(xv[i]);
      break;
    case OpKind::kSqrt:
      for (std::size_t i = 0; i < xv.size(); ++i) n.values[i] = std::sqrt(xv[i]);
      break;
    case OpKind::kScale:
      for (std::size_t i = 0; i < xv.size(); ++i) n.values[i] = alpha * xv[i];
      break;
    case OpKind::kAddScalar:
      for (std::size_t i = 0; i < xv.size(); ++i) n.values[i] = xv[i] + beta;
      break;
    case OpKind::kClamp:
      for (std::size_t i = 0; i < xv.size(); ++i)
        n.values[i] = std::min(std::max(xv[i], alpha), beta);
      break;
    default:
      throw Error("unary_map: bad kind");
  }
  check_finite(kind, n.values);
  return record(std::move(n));
}

Tensor Graph::leaky_relu(const Tensor& x, double alpha) {
  if (!(alpha > 0.0)) {
    throw ConfigError("leaky_relu: slope must be positive");
  }
  return unary_map(OpKind::kLeakyRelu, x, alpha, 0.0);
}

Tensor Graph::sigmoid(const Tensor& x) { return unary_map(OpKind::kSigmoid, x, 0, 0); }

Tensor Graph::log(const Tensor& x) { return unary_map(OpKind::kLog, x, 0, 0); }

Tensor Graph::sqrt(const Tensor& x) { return unary_map(OpKind::kSqrt, x, 0, 0); }

Tensor Graph::scale(const Tensor& x, double factor) {
  return unary_map(OpKind::kScale, x, factor, 0.0);
}

Tensor Graph::add_scalar(const Tensor& x, double value) {
  return unary_map(OpKind::kAddScalar, x, 0.0, value);
}

Tensor Graph::clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) {
    throw ConfigError("clamp: lo must not exceed hi");
  }
  return unary_map(OpKind::kClamp, x, lo, hi);
}

// --- Graph: reductions -------------------------------------------------------

namespace {

// Decomposes a shape around `axis` into (outer, extent, inner) so that the
// flat index is (o * extent + a) * inner + i.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t extent = 1;
  std::int64_t inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit sp;
  for (int d = 0; d < static_cast<int>(s.size()); ++d) {
    if (d < axis) sp.outer *= s[d];
    else if (d == axis) sp.extent = s[d];
    else sp.inner *= s[d];
  }
  return sp;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int d = 0; d < static_cast<int>(s.size()); ++d) {
    if (d != axis) out.push_back(s[d]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace

Tensor Graph::reduce_max(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("reduce_max: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Node n;
  n.kind = OpKind::kReduceMax;
  n.shape = drop_axis(s, axis);
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.axis = axis;
  const auto xv = x.values();
  n.values.resize(static_cast<std::size_t>(sp.outer * sp.inner));
  n.argmax.resize(n.values.size());
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      std::int64_t best_src = o * sp.extent * sp.inner + i;
      double best = xv[static_cast<std::size_t>(best_src)];
      for (std::int64_t a = 1; a < sp.extent; ++a) {
        const std::int64_t src = (o * sp.extent + a) * sp.inner + i;
        const double v = xv[static_cast<std::size_t>(src)];
        if (v > best) {  // strict: ties keep the first attaining index
          best = v;
          best_src = src;
        }
      }
      const std::size_t out = static_cast<std::size_t>(o * sp.inner + i);
      n.values[out] = best;
      n.argmax[out] = best_src;
    }
  }
  return record(std::move(n));
}

Tensor Graph::reduce_mean(const Tensor& x, int axis) {
  Tensor summed = reduce_sum(x, axis);
  nodes_.back().kind = OpKind::kReduceMean;
  const double inv = 1.0 / x.shape()[axis];
  for (double& v : nodes_.back().values) v *= inv;
  return summed;
}

Tensor Graph::reduce_sum(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("reduce_sum: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(s));
  }
  const AxisSplit sp = split_axis(s, axis);
  Node n;
  n.kind = OpKind::kReduceSum;
  n.shape = drop_axis(s, axis);
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.axis = axis;
  const auto xv = x.values();
  n.values.assign(static_cast<std::size_t>(sp.outer * sp.inner), 0.0);
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t a = 0; a < sp.extent; ++a) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        n.values[static_cast<std::size_t>(o * sp.inner + i)] +=
            xv[static_cast<std::size_t>((o * sp.extent + a) * sp.inner + i)];
      }
    }
  }
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::reduce_sum_all(const Tensor& x) {
  Tensor flat = reshape(x, {static_cast<int>(x.numel())});
  return reduce_sum(flat, 0);
}

Tensor Graph::reduce_mean_all(const Tensor& x) {
  Tensor total = reduce_sum_all(x);
  return scale(total, 1.0 / static_cast<double>(x.numel()));
}

Tensor Graph::broadcast_to(const Tensor& x, Shape target) {
  check_positive_extents(OpKind::kBroadcast, target);
  const Shape& s = x.shape();
  if (s.size() > target.size()) {
    throw ShapeError("broadcast: source rank exceeds target, " + shape_str(s) + " -> " +
                     shape_str(target));
  }
  const int off = static_cast<int>(target.size() - s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (s[d] != target[d + off] && s[d] != 1) {
      throw ShapeError("broadcast: " + shape_str(s) + " incompatible with " +
                       shape_str(target));
    }
  }
  Node n;
  n.kind = OpKind::kBroadcast;
  n.shape = std::move(target);
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  const auto xv = x.values();
  const int rank = static_cast<int>(n.shape.size());
  n.values.resize(static_cast<std::size_t>(shape_numel(n.shape)));
  std::vector<std::int64_t> in_strides(n.shape.size(), 0);
  std::int64_t stride = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    in_strides[static_cast<std::size_t>(d + off)] = (s[d] == 1) ? 0 : stride;
    stride *= s[d];
  }
  std::vector<int> idx(n.shape.size(), 0);
  for (std::size_t out = 0; out < n.values.size(); ++out) {
    std::int64_t src = 0;
    for (int d = 0; d < rank; ++d) src += idx[d] * in_strides[d];
    n.values[out] = xv[static_cast<std::size_t>(src)];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < n.shape[d]) break;
      idx[d] = 0;
    }
  }
  return record(std::move(n));
}

Tensor Graph::gather(const Tensor& x, std::vector<std::int64_t> flat_indices,
                     Shape out_shape) {
  check_positive_extents(OpKind::kGather, out_shape);
  if (shape_numel(out_shape) != static_cast<std::int64_t>(flat_indices.size())) {
    throw ShapeError("gather: index count " + std::to_string(flat_indices.size()) +
                     " does not fill " + shape_str(out_shape));
  }
  const std::int64_t limit = x.numel();
  for (std::int64_t idx : flat_indices) {
    if (idx < 0 || idx >= limit) {
      throw ShapeError("gather: index " + std::to_string(idx) + " out of range for " +
                       shape_str(x.shape()));
    }
  }
  Node n;
  n.kind = OpKind::kGather;
  n.shape = std::move(out_shape);
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.gather_idx = std::move(flat_indices);
  const auto xv = x.values();
  n.values.resize(n.gather_idx.size());
  for (std::size_t i = 0; i < n.gather_idx.size(); ++i) {
    n.values[i] = xv[static_cast<std::size_t>(n.gather_idx[i])];
  }
  return record(std::move(n));
}

// --- Graph: conv / softmax / resize -------------------------------------------

Tensor Graph::conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
                     const Conv2dSpec& spec) {
  const Shape& si = input.shape();
  const Shape& sw = weight.shape();
  if (si.size() != 3 || sw.size() != 4) {
    throw ShapeError("conv2d: expects input c*h*w and weight co*ci*kh*kw, got " +
                     shape_str(si) + " and " + shape_str(sw));
  }
  if (si[0] != sw[1]) {
    throw ShapeError("conv2d: input channels " + shape_str(si) +
                     " do not match weight " + shape_str(sw));
  }
  if (spec.stride < 1 || spec.pad < 0 || spec.dilation < 1) {
    throw ConfigError("conv2d: stride/dilation must be >= 1 and pad >= 0");
  }
  const int ci = si[0], ih = si[1], iw = si[2];
  const int co = sw[0], kh = sw[2], kw = sw[3];
  const int oh = (ih + 2 * spec.pad - spec.dilation * (kh - 1) - 1) / spec.stride + 1;
  const int ow = (iw + 2 * spec.pad - spec.dilation * (kw - 1) - 1) / spec.stride + 1;
  if (ih + 2 * spec.pad - spec.dilation * (kh - 1) - 1 < 0 ||
      iw + 2 * spec.pad - spec.dilation * (kw - 1) - 1 < 0 || oh < 1 || ow < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(sw) + " with pad " +
                     std::to_string(spec.pad) + " dilation " +
                     std::to_string(spec.dilation) + " exceeds input " + shape_str(si));
  }
  if (bias != nullptr) {
    const Shape& sb = bias->shape();
    if (sb.size() != 1 || sb[0] != co) {
      throw ShapeError("conv2d: bias " + shape_str(sb) + " does not match " +
                       std::to_string(co) + " output channels");
    }
  }
  Node n;
  n.kind = OpKind::kConv2d;
  n.shape = {co, oh, ow};
  n.inputs = {input.id_, weight.id_};
  n.requires_grad = input.requires_grad() || weight.requires_grad();
  if (bias != nullptr) {
    n.inputs.push_back(bias->id_);
    n.requires_grad = n.requires_grad || bias->requires_grad();
  }
  n.conv = spec;
  n.values.assign(static_cast<std::size_t>(co) * oh * ow, 0.0);

  const auto xv = input.values();
  const auto wv = weight.values();
  for (int c = 0; c < co; ++c) {
    const double b = bias != nullptr ? bias->values()[static_cast<std::size_t>(c)] : 0.0;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = b;
        for (int ic = 0; ic < ci; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int yy = oy * spec.stride - spec.pad + ky * spec.dilation;
            if (yy < 0 || yy >= ih) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int xx = ox * spec.stride - spec.pad + kx * spec.dilation;
              if (xx < 0 || xx >= iw) continue;
              acc += xv[(static_cast<std::size_t>(ic) * ih + yy) * iw + xx] *
                     wv[((static_cast<std::size_t>(c) * ci + ic) * kh + ky) * kw + kx];
            }
          }
        }
        n.values[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::softmax_lastdim(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) {
    throw ShapeError("softmax_lastdim: rank must be >= 1");
  }
  const int extent = s.back();
  Node n;
  n.kind = OpKind::kSoftmaxLastDim;
  n.shape = s;
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  const auto xv = x.values();
  n.values.resize(xv.size());
  for (std::size_t base = 0; base < xv.size(); base += extent) {
    double mx = xv[base];
    for (int i = 1; i < extent; ++i) mx = std::max(mx, xv[base + i]);
    double sum = 0.0;
    for (int i = 0; i < extent; ++i) {
      const double e = std::exp(xv[base + i] - mx);
      n.values[base + i] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < extent; ++i) n.values[base + i] *= inv;
  }
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

namespace {

// align-corners-false sample position and blend weights for one output index.
struct LerpTap {
  int lo;
  int hi;
  double w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
};

LerpTap bilinear_tap(int out_idx, int out_extent, int in_extent) {
  const double scale = static_cast<double>(in_extent) / out_extent;
  double pos = (out_idx + 0.5) * scale - 0.5;
  if (pos < 0.0) pos = 0.0;
  LerpTap t;
  t.lo = std::min(static_cast<int>(pos), in_extent - 1);
  t.hi = std::min(t.lo + 1, in_extent - 1);
  t.w_hi = pos - t.lo;
  if (t.hi == t.lo) t.w_hi = 0.0;
  return t;
}

}  // namespace

Tensor Graph::upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  const Shape& s = x.shape();
  if (s.size() != 3) {
    throw ShapeError("upsample_bilinear: expects c*h*w, got " + shape_str(s));
  }
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("upsample_bilinear: output extents must be >= 1");
  }
  const int c = s[0], ih = s[1], iw = s[2];
  Node n;
  n.kind = OpKind::kUpsampleBilinear;
  n.shape = {c, out_h, out_w};
  n.inputs = {x.id_};
  n.requires_grad = x.requires_grad();
  n.out_h = out_h;
  n.out_w = out_w;
  n.values.resize(static_cast<std::size_t>(c) * out_h * out_w);
  const auto xv = x.values();
  for (int oy = 0; oy < out_h; ++oy) {
    const LerpTap ty = bilinear_tap(oy, out_h, ih);
    for (int ox = 0; ox < out_w; ++ox) {
      const LerpTap tx = bilinear_tap(ox, out_w, iw);
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t plane = static_cast<std::size_t>(ch) * ih * iw;
        const double top = (1.0 - tx.w_hi) * xv[plane + static_cast<std::size_t>(ty.lo) * iw + tx.lo] +
                           tx.w_hi * xv[plane + static_cast<std::size_t>(ty.lo) * iw + tx.hi];
        const double bot = (1.0 - tx.w_hi) * xv[plane + static_cast<std::size_t>(ty.hi) * iw + tx.lo] +
                           tx.w_hi * xv[plane + static_cast<std::size_t>(ty.hi) * iw + tx.hi];
        n.values[(static_cast<std::size_t>(ch) * out_h + oy) * out_w + ox] =
            (1.0 - ty.w_hi) * top + ty.w_hi * bot;
      }
    }
  }
  check_finite(n.kind, n.values);
  return record(std::move(n));
}

Tensor Graph::apply_primitive(OpKind kind, std::span<const Tensor> inputs,
                              const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expects " + std::to_string(n) +
                       " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::kAdd: need(2); return add(inputs[0], inputs[1]);
    case OpKind::kSub: need(2); return sub(inputs[0], inputs[1]);
    case OpKind::kMul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::kMatmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::kConcatChannels: return concat_channels(inputs);
    case OpKind::kReshape: need(1); return reshape(inputs[0], attrs.shape);
    case OpKind::kPermute:
      need(1);
      if (attrs.perm.empty()) return transpose(inputs[0]);
      return permute(inputs[0], attrs.perm);
    case OpKind::kLeakyRelu: need(1); return leaky_relu(inputs[0], attrs.alpha);
    case OpKind::kSigmoid: need(1); return sigmoid(inputs[0]);
    case OpKind::kLog: need(1); return log(inputs[0]);
    case OpKind::kSqrt: need(1); return sqrt(inputs[0]);
    case OpKind::kScale: need(1); return scale(inputs[0], attrs.alpha);
    case OpKind::kReduceMax: need(1); return reduce_max(inputs[0], attrs.axis);
    case OpKind::kReduceMean: need(1); return reduce_mean(inputs[0], attrs.axis);
    case OpKind::kReduceSum: need(1); return reduce_sum(inputs[0], attrs.axis);
    case OpKind::kBroadcast: need(1); return broadcast_to(inputs[0], attrs.shape);
    case OpKind::kSoftmaxLastDim: need(1); return softmax_lastdim(inputs[0]);
    default:
      throw ConfigError(std::string(op_name(kind)) +
                        ": not dispatchable through apply_primitive");
  }
}

// --- backward ----------------------------------------------------------------

void Graph::backward(const Tensor& loss) {
  if (loss.graph_ != this) {
    throw Error("backward: tensor belongs to a different graph");
  }
  if (backward_done_) {
    throw Error("backward: graph already consumed by a previous backward pass");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a single element, got " +
                     shape_str(loss.shape()));
  }
  backward_done_ = true;
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.assign(n.values.size(), 0.0);
  }
  Node& root = nodes_[static_cast<std::size_t>(loss.id_)];
  if (!root.requires_grad) return;  // loss does not depend on any leaf
  root.grad[0] = 1.0;
  for (int id = loss.id_; id >= 0; --id) {
    backward_node(id);
  }
}

void Graph::backward_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad || n.grad.empty() || n.inputs.empty()) return;

  auto in = [&](std::size_t slot) -> Node& {
    return nodes_[static_cast<std::size_t>(n.inputs[slot])];
  };
  auto wants = [&](std::size_t slot) { return in(slot).requires_grad; };

  switch (n.kind) {
    case OpKind::kAdd: {
      for (std::size_t slot = 0; slot < 2; ++slot) {
        if (!wants(slot)) continue;
        auto& g = in(slot).grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
      break;
    }
    case OpKind::kSub: {
      if (wants(0)) {
        auto& g = in(0).grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
      if (wants(1)) {
        auto& g = in(1).grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
      }
      break;
    }
    case OpKind::kMul: {
      if (wants(0)) {
        auto& g = in(0).grad;
        const auto& other = in(1).values;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * other[i];
      }
      if (wants(1)) {
        auto& g = in(1).grad;
        const auto& other = in(0).values;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * other[i];
      }
      break;
    }
    case OpKind::kMatmul: {
      const Node& a = in(0);
      const Node& b = in(1);
      const int m = a.shape[0], k = a.shape[1], nn = b.shape[1];
      if (wants(0)) {
        auto& ga = in(0).grad;  // dA = dC * B^T
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < nn; ++j) {
            const double gv = n.grad[static_cast<std::size_t>(i) * nn + j];
            const double* brow = &b.values[static_cast<std::size_t>(0) * nn + j];
            for (int l = 0; l < k; ++l) {
              ga[static_cast<std::size_t>(i) * k + l] +=
                  gv * brow[static_cast<std::size_t>(l) * nn];
            }
          }
        }
      }
      if (wants(1)) {
        auto& gb = in(1).grad;  // dB = A^T * dC
        for (int l = 0; l < k; ++l) {
          for (int i = 0; i < m; ++i) {
            const double av = a.values[static_cast<std::size_t>(i) * k + l];
            const double* grow = &n.grad[static_cast<std::size_t>(i) * nn];
            double* gbrow = &gb[static_cast<std::size_t>(l) * nn];
            for (int j = 0; j < nn; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case OpKind::kConcatChannels: {
      std::size_t offset = 0;
      for (std::size_t slot = 0; slot < n.inputs.size(); ++slot) {
        const std::size_t len = in(slot).values.size();
        if (wants(slot)) {
          auto& g = in(slot).grad;
          for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[offset + i];
        }
        offset += len;
      }
      break;
    }
    case OpKind::kReshape: {
      if (wants(0)) {
        auto& g = in(0).grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      }
      break;
    }
    case OpKind::kPermute: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const Shape& in_shape = in(0).shape;
      const int rank = static_cast<int>(in_shape.size());
      std::vector<std::int64_t> in_strides(in_shape.size(), 1);
      for (int d = rank - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
      std::vector<int> idx(n.shape.size(), 0);
      for (std::size_t out = 0; out < n.grad.size(); ++out) {
        std::int64_t src = 0;
        for (int d = 0; d < rank; ++d) src += idx[d] * in_strides[n.perm[d]];
        g[static_cast<std::size_t>(src)] += n.grad[out];
        for (int d = rank - 1; d >= 0; --d) {
          if (++idx[d] < n.shape[d]) break;
          idx[d] = 0;
        }
      }
      break;
    }
    case OpKind::kLeakyRelu: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const auto& xv = in(0).values;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        g[i] += n.grad[i] * (xv[i] >= 0.0 ? 1.0 : n.alpha);
      }
      break;
    }
    case OpKind::kSigmoid: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const double s = n.values[i];
        g[i] += n.grad[i] * s * (1.0 - s);
      }
      break;
    }
    case OpKind::kLog: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const auto& xv = in(0).values;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / xv[i];
      break;
    }
    case OpKind::kSqrt: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        g[i] += n.grad[i] * 0.5 / n.values[i];
      }
      break;
    }
    case OpKind::kScale: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * n.alpha;
      break;
    }
    case OpKind::kAddScalar: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
      break;
    }
    case OpKind::kClamp: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const auto& xv = in(0).values;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        if (xv[i] >= n.alpha && xv[i] <= n.beta) g[i] += n.grad[i];
      }
      break;
    }
    case OpKind::kReduceMax: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        g[static_cast<std::size_t>(n.argmax[i])] += n.grad[i];
      }
      break;
    }
    case OpKind::kReduceSum:
    case OpKind::kReduceMean: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const AxisSplit sp = split_axis(in(0).shape, n.axis);
      const double f = n.kind == OpKind::kReduceMean ? 1.0 / sp.extent : 1.0;
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t a = 0; a < sp.extent; ++a) {
          for (std::int64_t i = 0; i < sp.inner; ++i) {
            g[static_cast<std::size_t>((o * sp.extent + a) * sp.inner + i)] +=
                f * n.grad[static_cast<std::size_t>(o * sp.inner + i)];
          }
        }
      }
      break;
    }
    case OpKind::kBroadcast: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const Shape& s = in(0).shape;
      const int rank = static_cast<int>(n.shape.size());
      const int off = rank - static_cast<int>(s.size());
      std::vector<std::int64_t> in_strides(n.shape.size(), 0);
      std::int64_t stride = 1;
      for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
        in_strides[static_cast<std::size_t>(d + off)] = (s[d] == 1) ? 0 : stride;
        stride *= s[d];
      }
      std::vector<int> idx(n.shape.size(), 0);
      for (std::size_t out = 0; out < n.grad.size(); ++out) {
        std::int64_t src = 0;
        for (int d = 0; d < rank; ++d) src += idx[d] * in_strides[d];
        g[static_cast<std::size_t>(src)] += n.grad[out];
        for (int d = rank - 1; d >= 0; --d) {
          if (++idx[d] < n.shape[d]) break;
          idx[d] = 0;
        }
      }
      break;
    }
    case OpKind::kGather: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        g[static_cast<std::size_t>(n.gather_idx[i])] += n.grad[i];
      }
      break;
    }
    case OpKind::kConv2d: {
      const Node& x = in(0);
      const Node& w = in(1);
      const int ci = x.shape[0], ih = x.shape[1], iw = x.shape[2];
      const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      const int oh = n.shape[1], ow = n.shape[2];
      const Conv2dSpec& sp = n.conv;
      const bool want_x = wants(0);
      const bool want_w = wants(1);
      for (int c = 0; c < co; ++c) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double gv = n.grad[(static_cast<std::size_t>(c) * oh + oy) * ow + ox];
            if (gv == 0.0) continue;
            for (int ic = 0; ic < ci; ++ic) {
              for (int ky = 0; ky < kh; ++ky) {
                const int yy = oy * sp.stride - sp.pad + ky * sp.dilation;
                if (yy < 0 || yy >= ih) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int xx = ox * sp.stride - sp.pad + kx * sp.dilation;
                  if (xx < 0 || xx >= iw) continue;
                  const std::size_t xi = (static_cast<std::size_t>(ic) * ih + yy) * iw + xx;
                  const std::size_t wi =
                      ((static_cast<std::size_t>(c) * ci + ic) * kh + ky) * kw + kx;
                  if (want_x) in(0).grad[xi] += gv * w.values[wi];
                  if (want_w) in(1).grad[wi] += gv * x.values[xi];
                }
              }
            }
          }
        }
      }
      if (n.inputs.size() == 3 && wants(2)) {
        auto& gb = in(2).grad;
        for (int c = 0; c < co; ++c) {
          double acc = 0.0;
          const std::size_t base = static_cast<std::size_t>(c) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += n.grad[base + i];
          gb[static_cast<std::size_t>(c)] += acc;
        }
      }
      break;
    }
    case OpKind::kSoftmaxLastDim: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const int extent = n.shape.back();
      for (std::size_t base = 0; base < n.grad.size(); base += extent) {
        double dot = 0.0;
        for (int i = 0; i < extent; ++i) dot += n.grad[base + i] * n.values[base + i];
        for (int i = 0; i < extent; ++i) {
          g[base + i] += n.values[base + i] * (n.grad[base + i] - dot);
        }
      }
      break;
    }
    case OpKind::kUpsampleBilinear: {
      if (!wants(0)) break;
      auto& g = in(0).grad;
      const Shape& s = in(0).shape;
      const int c = s[0], ih = s[1], iw = s[2];
      for (int oy = 0; oy < n.out_h; ++oy) {
        const LerpTap ty = bilinear_tap(oy, n.out_h, ih);
        for (int ox = 0; ox < n.out_w; ++ox) {
          const LerpTap tx = bilinear_tap(ox, n.out_w, iw);
          for (int ch = 0; ch < c; ++ch) {
            const double gv =
                n.grad[(static_cast<std::size_t>(ch) * n.out_h + oy) * n.out_w + ox];
            const std::size_t plane = static_cast<std::size_t>(ch) * ih * iw;
            g[plane + static_cast<std::size_t>(ty.lo) * iw + tx.lo] +=
                gv * (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
            g[plane + static_cast<std::size_t>(ty.lo) * iw + tx.hi] +=
                gv * (1.0 - ty.w_hi) * tx.w_hi;
            g[plane + static_cast<std::size_t>(ty.hi) * iw + tx.lo] +=
                gv * ty.w_hi * (1.0 - tx.w_hi);
            g[plane + static_cast<std::size_t>(ty.hi) * iw + tx.hi] +=
                gv * ty.w_hi * tx.w_hi;
          }
        }
      }
      break;
    }
    case OpKind::kConstant:
    case OpKind::kLeaf:
      break;
  }
}

void Graph::accumulate_param_grads(double scale) {
  for (const auto& [id, p] : param_leaves_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) continue;
    if (p->grad.size() != n.grad.size()) {
      p->grad.assign(n.grad.size(), 0.0);
    }
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      p->grad[i] += scale * n.grad[i];
    }
  }
}

}  // namespace edgedepth
