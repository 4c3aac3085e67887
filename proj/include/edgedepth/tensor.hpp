#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "edgedepth/errors.hpp"

namespace edgedepth {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class OpKind {
  kConstant,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kMatmul,
  kConcatChannels,
  kReshape,
  kPermute,
  kLeakyRelu,
  kSigmoid,
  kLog,
  kSqrt,
  kScale,
  kAddScalar,
  kClamp,
  kReduceMax,
  kReduceMean,
  kReduceSum,
  kBroadcast,
  kGather,
  kConv2d,
  kSoftmaxLastDim,
  kUpsampleBilinear,
};

const char* op_name(OpKind kind);

struct Conv2dSpec {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

// Attribute bag for the generic apply_primitive entry point.
struct PrimitiveAttrs {
  double alpha = 0.2;        // leaky_relu slope or scale factor
  int axis = -1;             // reduce axis
  Shape shape;               // reshape / broadcast target
  std::vector<int> perm;     // permute order
};

struct Parameter;  // defined in params.hpp
class Graph;

// Lightweight handle into a Graph node. Copyable; valid as long as the
// owning Graph is alive.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return graph_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  bool requires_grad() const;
  std::span<const double> values() const;
  std::span<const double> grad() const;  // populated by Graph::backward
  double scalar() const;                 // value of a single-element tensor
  double at(std::span<const int> index) const;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }

 private:
  friend class Graph;
  Tensor(Graph* graph, int id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. Nodes are recorded in creation order, which is a
// topological order by construction; backward walks it once in reverse.
// A Graph and its Tensors belong to a single thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves ------------------------------------------------------------
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant_scalar(double value);
  Tensor leaf(Shape shape, std::vector<double> values);
  Tensor param(Parameter& p);  // leaf whose grad is written back on request

  // --- primitives ---------------------------------------------------------
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor concat_channels(std::span<const Tensor> parts);
  Tensor reshape(const Tensor& x, Shape shape);
  Tensor transpose(const Tensor& x);  // rank-2 only
  Tensor permute(const Tensor& x, std::vector<int> axes);
  Tensor leaky_relu(const Tensor& x, double alpha);
  Tensor sigmoid(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor sqrt(const Tensor& x);
  Tensor scale(const Tensor& x, double factor);
  Tensor add_scalar(const Tensor& x, double value);
  Tensor clamp(const Tensor& x, double lo, double hi);
  Tensor reduce_max(const Tensor& x, int axis);
  Tensor reduce_mean(const Tensor& x, int axis);
  Tensor reduce_sum(const Tensor& x, int axis);
  Tensor reduce_sum_all(const Tensor& x);
  Tensor reduce_mean_all(const Tensor& x);
  Tensor broadcast_to(const Tensor& x, Shape target);
  Tensor gather(const Tensor& x, std::vector<std::int64_t> flat_indices, Shape out_shape);
  Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
                const Conv2dSpec& spec);
  Tensor softmax_lastdim(const Tensor& x);
  Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);

  // Generic dispatcher covering the named primitive kinds.
  Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs,
                         const PrimitiveAttrs& attrs = {});

  // --- differentiation ----------------------------------------------------
  // Computes grads of `loss` (single element) w.r.t. every requires_grad
  // node. May be called once per graph; accumulation order is the reverse
  // of the recording order, so repeated runs are bit-identical.
  void backward(const Tensor& loss);

  // Adds scale * grad of each bound parameter leaf into Parameter::grad.
  void accumulate_param_grads(double scale = 1.0);

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    OpKind kind;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily in backward
    bool requires_grad = false;
    std::vector<int> inputs;

    // Per-kind attributes; only the relevant fields are set.
    double alpha = 0.0;  // leaky_relu slope, scale factor, clamp lo
    double beta = 0.0;   // add_scalar value, clamp hi
    int axis = -1;
    std::vector<int> perm;
    std::vector<std::int64_t> gather_idx;
    std::vector<std::int64_t> argmax;  // reduce_max winner per output element
    Conv2dSpec conv;
    int out_h = 0;
    int out_w = 0;
  };

  const Node& node(const Tensor& t) const;
  Tensor record(Node node);
  Tensor unary_map(OpKind kind, const Tensor& x, double alpha, double beta);
  void backward_node(int id);

  // deque: appending never moves existing nodes, so shape references and
  // value spans held by callers stay valid for the life of the graph.
  std::deque<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> param_leaves_;
  bool backward_done_ = false;

  friend class Tensor;
};

}  // namespace edgedepth
