/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Reverse-mode automatic differentiation over an append-only expression
// graph. Every derivative rule emits nodes built from the same op set, so a
// gradient expression can itself be differentiated (grad-of-grad).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gradleak/tensor.hpp"

namespace gradleak {

enum class OpKind : std::uint8_t {
  kLeaf,      // named, rebindable input
  kConstant,  // fixed value
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatMul,
  kConv2d,
  kSigmoid,
  kLog,
  kExp,
  kSum,
  kMean,
  kReshape,
  kSoftmax,
  kSquare,
  kBroadcast,
};

inline std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScalarMul: return "scalar_mul";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kSquare: return "square";
    case OpKind::kBroadcast: return "broadcast";
  }
  return "?";
}

/// True for every op that has a derivative rule (all but leaves and constants).
inline bool is_differentiable_op(OpKind op) {
  return op != OpKind::kLeaf && op != OpKind::kConstant;
}

/// The three bilinear faces of a stride-1 2-D convolution. The input and
/// kernel gradients of each face are again one of the three faces, which is
/// what keeps conv2d closed under differentiation.
enum class ConvMode : std::uint8_t {
  kForward,     // (x[N,C,H,W], k[O,C,KH,KW]) -> y[N,O,Ho,Wo]
  kInputGrad,   // (g[N,O,Ho,Wo], k[O,C,KH,KW]) -> dx[N,C,H,W]
  kKernelGrad,  // (x[N,C,H,W], g[N,O,Ho,Wo]) -> dk[O,C,KH,KW]
};

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

class NonFiniteError : public Error {
 public:
  NonFiniteError(NodeId node, OpKind op)
      : Error("non-finite value produced by node " + std::to_string(node) + " (" +
              std::string(op_name(op)) + ")"),
        node_(node),
        op_(op) {}
  NodeId node() const { return node_; }
  OpKind op() const { return op_; }

 private:
  NodeId node_;
  OpKind op_;
};

struct Node {
  OpKind op = OpKind::kConstant;
  NodeId lhs = kNoNode;
  NodeId rhs = kNoNode;
  double scalar = 0.0;        // scalar_mul factor
  Shape target;               // sum / reshape / broadcast target
  bool trans_a = false;       // matmul
  bool trans_b = false;
  ConvMode conv = ConvMode::kForward;
  std::size_t pad = 0;        // conv2d zero padding
  std::string name;           // leaves only
  bool dynamic = false;       // depends on some leaf
  std::vector<std::size_t> index_map;  // broadcast / sum
  Tensor value;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  Graph* graph() const { return graph_; }
  NodeId id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ != kNoNode; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  NodeId id_ = kNoNode;
};

struct GradResult {
  std::vector<Var> grads;
  /// grads[i] is a zero constant because wrt[i] does not reach the output.
  std::vector<bool> unreachable;
};

namespace detail {

// For each flat index of `big`, the flat index of `small` it reads from under
// right-aligned broadcasting.
inline std::vector<std::size_t> broadcast_index_map(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) {
    throw ShapeError("cannot broadcast " + shape_str(small) + " to " + shape_str(big));
  }
  const std::size_t rank = big.size();
  const std::size_t offset = rank - small.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t k = small.size(); k-- > 0;) {
    const std::size_t axis = k + offset;
    if (small[k] == big[axis]) {
      stride[axis] = s;
    } else if (small[k] != 1) {
      throw ShapeError("cannot broadcast " + shape_str(small) + " to " + shape_str(big));
    }
    s *= small[k];
  }
  const std::size_t total = shape_numel(big);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = cur;
    for (std::size_t axis = rank; axis-- > 0;) {
      if (++idx[axis] < big[axis]) {
        cur += stride[axis];
        break;
      }
      cur -= stride[axis] * (big[axis] - 1);
      idx[axis] = 0;
    }
  }
  return map;
}

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, ho, wo;
};

inline void conv_forward(const ConvDims& d, std::size_t p, const double* x, const double* k,
                         double* y) {
  std::fill(y, y + d.n * d.o * d.ho * d.wo, 0.0);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.o; ++o) {
      double* yo = y + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* xc = x + (n * d.c + c) * d.h * d.w;
        for (std::size_t a = 0; a < d.kh; ++a)
          for (std::size_t b = 0; b < d.kw; ++b) {
            const double kv = k[((o * d.c + c) * d.kh + a) * d.kw + b];
            for (std::size_t i = 0; i < d.ho; ++i) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(p);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t j = 0; j < d.wo; ++j) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(p);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(d.w)) continue;
                yo[i * d.wo + j] += kv * xc[ii * d.w + jj];
              }
            }
          }
      }
    }
}

inline void conv_input_grad(const ConvDims& d, std::size_t p, const double* g, const double* k,
                            double* dx) {
  std::fill(dx, dx + d.n * d.c * d.h * d.w, 0.0);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.o; ++o) {
      const double* go = g + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        double* xc = dx + (n * d.c + c) * d.h * d.w;
        for (std::size_t a = 0; a < d.kh; ++a)
          for (std::size_t b = 0; b < d.kw; ++b) {
            const double kv = k[((o * d.c + c) * d.kh + a) * d.kw + b];
            for (std::size_t i = 0; i < d.ho; ++i) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(p);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t j = 0; j < d.wo; ++j) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(p);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(d.w)) continue;
                xc[ii * d.w + jj] += kv * go[i * d.wo + j];
              }
            }
          }
      }
    }
}

inline void conv_kernel_grad(const ConvDims& d, std::size_t p, const double* x, const double* g,
                             double* dk) {
  std::fill(dk, dk + d.o * d.c * d.kh * d.kw, 0.0);
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t o = 0; o < d.o; ++o) {
      const double* go = g + (n * d.o + o) * d.ho * d.wo;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* xc = x + (n * d.c + c) * d.h * d.w;
        for (std::size_t a = 0; a < d.kh; ++a)
          for (std::size_t b = 0; b < d.kw; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < d.ho; ++i) {
              const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + a) - static_cast<std::ptrdiff_t>(p);
              if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(d.h)) continue;
              for (std::size_t j = 0; j < d.wo; ++j) {
                const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + b) - static_cast<std::ptrdiff_t>(p);
                if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(d.w)) continue;
                s += xc[ii * d.w + jj] * go[i * d.wo + j];
              }
            }
            dk[((o * d.c + c) * d.kh + a) * d.kw + b] += s;
          }
      }
    }
}

}  // namespace detail

/// Append-only expression graph. Nodes are evaluated eagerly when created;
/// forward() rebinds leaves and re-evaluates every node that depends on one.
///
/// A Graph is pinned in memory (Var handles point at it); hold it by
/// unique_ptr when it has to move.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }
  std::uint64_t generation() const { return generation_; }

  Var leaf(std::string name, Tensor value) {
    if (leaf_index_.count(name)) throw Error("duplicate leaf name '" + name + "'");
    Node n;
    n.op = OpKind::kLeaf;
    n.name = name;
    n.dynamic = true;
    n.value = std::move(value);
    Var v = append(std::move(n));
    leaf_index_.emplace(std::move(name), v.id());
    return v;
  }

  Var constant(Tensor value) {
    Node n;
    n.op = OpKind::kConstant;
    n.value = std::move(value);
    return append(std::move(n));
  }

  Var find_leaf(const std::string& name) const {
    auto it = leaf_index_.find(name);
    if (it == leaf_index_.end()) throw Error("no leaf named '" + name + "'");
    return Var(const_cast<Graph*>(this), it->second);
  }

  // ---- op builders -------------------------------------------------------

  Var add(Var a, Var b) { return binary(OpKind::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(OpKind::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(OpKind::kMul, a, b); }

  Var scalar_mul(Var a, double factor) {
    Node n = unary_node(OpKind::kScalarMul, a);
    n.scalar = factor;
    n.value = Tensor(value(a).shape());
    return append(std::move(n));
  }

  /// op(A) * op(B) for rank-2 operands, op = optional transpose.
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
    const Shape& sa = value(a).shape();
    const Shape& sb = value(b).shape();
    if (sa.size() != 2 || sb.size() != 2) {
      throw ShapeError("matmul needs rank-2 operands, got " + shape_str(sa) + " and " +
                       shape_str(sb));
    }
    const std::size_t m = trans_a ? sa[1] : sa[0];
    const std::size_t ka = trans_a ? sa[0] : sa[1];
    const std::size_t kb = trans_b ? sb[1] : sb[0];
    const std::size_t nn = trans_b ? sb[0] : sb[1];
    if (ka != kb) {
      throw ShapeError("matmul inner extents differ: " + shape_str(sa) + " x " + shape_str(sb));
    }
    Node n = binary_node(OpKind::kMatMul, a, b);
    n.trans_a = trans_a;
    n.trans_b = trans_b;
    n.value = Tensor(Shape{m, nn});
    return append(std::move(n));
  }

  /// Stride-1 convolution face `mode` with `pad` zeros on every border.
  Var conv2d(Var a, Var b, std::size_t pad = 0, ConvMode mode = ConvMode::kForward) {
    Node n = binary_node(OpKind::kConv2d, a, b);
    n.conv = mode;
    n.pad = pad;
    const detail::ConvDims d = conv_dims(value(a).shape(), value(b).shape(), pad, mode);
    switch (mode) {
      case ConvMode::kForward: n.value = Tensor(Shape{d.n, d.o, d.ho, d.wo}); break;
      case ConvMode::kInputGrad: n.value = Tensor(Shape{d.n, d.c, d.h, d.w}); break;
      case ConvMode::kKernelGrad: n.value = Tensor(Shape{d.o, d.c, d.kh, d.kw}); break;
    }
    return append(std::move(n));
  }

  Var sigmoid(Var a) { return same_shape_unary(OpKind::kSigmoid, a); }
  Var log(Var a) { return same_shape_unary(OpKind::kLog, a); }
  Var exp(Var a) { return same_shape_unary(OpKind::kExp, a); }
  Var square(Var a) { return same_shape_unary(OpKind::kSquare, a); }
  /// Softmax along the last axis.
  Var softmax(Var a) {
    if (value(a).rank() == 0) throw ShapeError("softmax of a scalar");
    return same_shape_unary(OpKind::kSoftmax, a);
  }

  /// Sum down to `target` (right-aligned broadcast-compatible with the input);
  /// an empty target sums everything to a scalar.
  Var sum(Var a, Shape target = {}) {
    Node n = unary_node(OpKind::kSum, a);
    n.index_map = detail::broadcast_index_map(target, value(a).shape());
    n.target = target;
    n.value = Tensor(std::move(target));
    return append(std::move(n));
  }

  Var mean(Var a) {
    Node n = unary_node(OpKind::kMean, a);
    n.value = Tensor::scalar(0.0);
    return append(std::move(n));
  }

  Var reshape(Var a, Shape target) {
    if (shape_numel(target) != value(a).size()) {
      throw ShapeError("reshape " + shape_str(value(a).shape()) + " -> " + shape_str(target));
    }
    Node n = unary_node(OpKind::kReshape, a);
    n.target = target;
    n.value = Tensor(std::move(target));
    return append(std::move(n));
  }

  Var broadcast(Var a, Shape target) {
    Node n = unary_node(OpKind::kBroadcast, a);
    n.index_map = detail::broadcast_index_map(value(a).shape(), target);
    n.target = target;
    n.value = Tensor(std::move(target));
    return append(std::move(n));
  }

  // ---- evaluation --------------------------------------------------------

  /// Overwrite a leaf's value without re-evaluating. Call recompute() after.
  void set_leaf(Var leaf, std::span<const double> values) {
    Node& n = nodes_.at(leaf.id());
    if (n.op != OpKind::kLeaf) throw Error("set_leaf on a non-leaf node");
    if (values.size() != n.value.size()) {
      throw ShapeError("binding for leaf '" + n.name + "' has " + std::to_string(values.size()) +
                       " elements, expected " + std::to_string(n.value.size()));
    }
    std::copy(values.begin(), values.end(), n.value.data().begin());
  }

  void bind(const std::string& name, const Tensor& value) {
    Var v = find_leaf(name);
    if (value.shape() != nodes_[v.id()].value.shape()) {
      throw ShapeError("binding for leaf '" + name + "' has shape " + shape_str(value.shape()) +
                       ", expected " + shape_str(nodes_[v.id()].value.shape()));
    }
    set_leaf(v, value.data());
  }

  /// Re-evaluates every leaf-dependent node in creation order.
  void recompute() {
    ++generation_;
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (!n.dynamic || n.op == OpKind::kLeaf) continue;
      evaluate(id);
    }
  }

  void forward(const std::map<std::string, Tensor>& bindings) {
    for (const auto& [name, value] : bindings) bind(name, value);
    recompute();
  }

  const Tensor& forward(const std::map<std::string, Tensor>& bindings, Var output) {
    forward(bindings);
    return value(output);
  }

  // ---- differentiation ---------------------------------------------------

  /// Gradient expressions of scalar `output` with respect to each of `wrt`.
  /// The returned Vars are ordinary graph nodes and can be differentiated
  /// again.
  GradResult grad(Var output, std::span<const Var> wrt) {
    if (value(output).size() != 1) {
      throw ShapeError("grad() needs a scalar output, got shape " +
                       shape_str(value(output).shape()));
    }
    const std::size_t count = nodes_.size();
    std::vector<char> depends(count, 0);
    for (Var w : wrt) depends.at(w.id()) = 1;
    for (NodeId id = 0; id < count; ++id) {
      const Node& n = nodes_[id];
      if ((n.lhs != kNoNode && depends[n.lhs]) || (n.rhs != kNoNode && depends[n.rhs])) {
        depends[id] = 1;
      }
    }

    std::vector<NodeId> adjoint(count, kNoNode);
    adjoint[output.id()] = constant(Tensor(value(output).shape(), 1.0)).id();
    for (NodeId id = output.id() + 1; id-- > 0;) {
      if (adjoint[id] == kNoNode || !depends[id]) continue;
      if (!is_differentiable_op(nodes_[id].op)) continue;
      backprop(id, Var(this, adjoint[id]), depends, adjoint);
    }

    GradResult result;
    for (Var w : wrt) {
      if (adjoint[w.id()] == kNoNode) {
        result.grads.push_back(constant(Tensor(value(w).shape(), 0.0)));
        result.unreachable.push_back(true);
      } else {
        result.grads.push_back(Var(this, adjoint[w.id()]));
        result.unreachable.push_back(false);
      }
    }
    return result;
  }

  GradResult grad(Var output, std::initializer_list<Var> wrt) {
    return grad(output, std::span<const Var>(wrt.begin(), wrt.size()));
  }

  /// Gradient expressions keyed by leaf name.
  std::map<std::string, Var> grad(Var output, const std::vector<std::string>& leaves) {
    std::vector<Var> wrt;
    for (const auto& name : leaves) wrt.push_back(find_leaf(name));
    GradResult r = grad(output, wrt);
    std::map<std::string, Var> out;
    for (std::size_t i = 0; i < leaves.size(); ++i) out.emplace(leaves[i], r.grads[i]);
    return out;
  }

 private:
  Var append(Node n) {
    if (nodes_.size() >= kNoNode) throw Error("graph node limit reached");
    const NodeId id = static_cast<NodeId>(nodes_.size());
    if (n.op != OpKind::kLeaf) {
      n.dynamic = (n.lhs != kNoNode && nodes_[n.lhs].dynamic) ||
                  (n.rhs != kNoNode && nodes_[n.rhs].dynamic);
    }
    nodes_.push_back(std::move(n));
    if (is_differentiable_op(nodes_.back().op)) {
      evaluate(id);
    } else if (!nodes_.back().value.all_finite()) {
      throw NonFiniteError(id, nodes_.back().op);
    }
    return Var(this, id);
  }

  void check_owned(Var v) const {
    if (v.graph() != this || v.id() >= nodes_.size()) {
      throw Error("Var does not belong to this graph");
    }
  }

  Node unary_node(OpKind op, Var a) {
    check_owned(a);
    Node n;
    n.op = op;
    n.lhs = a.id();
    return n;
  }

  Node binary_node(OpKind op, Var a, Var b) {
    check_owned(a);
    check_owned(b);
    Node n;
    n.op = op;
    n.lhs = a.id();
    n.rhs = b.id();
    return n;
  }

  Var same_shape_unary(OpKind op, Var a) {
    Node n = unary_node(op, a);
    n.value = Tensor(value(a).shape());
    return append(std::move(n));
  }

  Var binary(OpKind op, Var a, Var b) {
    if (value(a).shape() != value(b).shape()) {
      throw ShapeError(std::string(op_name(op)) + " operands differ in shape: " +
                       shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
    }
    Node n = binary_node(op, a, b);
    n.value = Tensor(value(a).shape());
    return append(std::move(n));
  }

  static detail::ConvDims conv_dims(const Shape& sa, const Shape& sb, std::size_t p,
                                    ConvMode mode) {
    if (sa.size() != 4 || sb.size() != 4) {
      throw ShapeError("conv2d needs rank-4 operands, got " + shape_str(sa) + " and " +
                       shape_str(sb));
    }
    detail::ConvDims d{};
    auto fail = [&] {
      throw ShapeError("conv2d operands incompatible: " + shape_str(sa) + " and " +
                       shape_str(sb) + " pad " + std::to_string(p));
    };
    switch (mode) {
      case ConvMode::kForward: {
        d = {sa[0], sa[1], sa[2], sa[3], sb[0], sb[2], sb[3], 0, 0};
        if (sb[1] != d.c || d.h + 2 * p < d.kh || d.w + 2 * p < d.kw) fail();
        d.ho = d.h + 2 * p - d.kh + 1;
        d.wo = d.w + 2 * p - d.kw + 1;
        break;
      }
      case ConvMode::kInputGrad: {
        // a = g[N,O,Ho,Wo], b = k[O,C,KH,KW]
        d = {sa[0], sb[1], 0, 0, sa[1], sb[2], sb[3], sa[2], sa[3]};
        if (sb[0] != d.o || d.ho + d.kh < 1 + 2 * p + 1 || d.wo + d.kw < 1 + 2 * p + 1) fail();
        d.h = d.ho + d.kh - 1 - 2 * p;
        d.w = d.wo + d.kw - 1 - 2 * p;
        break;
      }
      case ConvMode::kKernelGrad: {
        // a = x[N,C,H,W], b = g[N,O,Ho,Wo]
        d = {sa[0], sa[1], sa[2], sa[3], sb[1], 0, 0, sb[2], sb[3]};
        if (sb[0] != d.n || d.h + 2 * p + 1 < d.ho + 1 || d.w + 2 * p + 1 < d.wo + 1) fail();
        d.kh = d.h + 2 * p - d.ho + 1;
        d.kw = d.w + 2 * p - d.wo + 1;
        break;
      }
    }
    return d;
  }

  void evaluate(NodeId id) {
    Node& n = nodes_[id];
    double* out = n.value.data().data();
    const std::size_t size = n.value.size();
    const Tensor* a = n.lhs != kNoNode ? &nodes_[n.lhs].value : nullptr;
    const Tensor* b = n.rhs != kNoNode ? &nodes_[n.rhs].value : nullptr;
    switch (n.op) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kAdd:
        for (std::size_t i = 0; i < size; ++i) out[i] = (*a)[i] + (*b)[i];
        break;
      case OpKind::kSub:
        for (std::size_t i = 0; i < size; ++i) out[i] = (*a)[i] - (*b)[i];
        break;
      case OpKind::kMul:
        for (std::size_t i = 0; i < size; ++i) out[i] = (*a)[i] * (*b)[i];
        break;
      case OpKind::kScalarMul:
        for (std::size_t i = 0; i < size; ++i) out[i] = n.scalar * (*a)[i];
        break;
      case OpKind::kMatMul:
        eval_matmul(n, *a, *b, out);
        break;
      case OpKind::kConv2d: {
        const auto d = conv_dims(a->shape(), b->shape(), n.pad, n.conv);
        switch (n.conv) {
          case ConvMode::kForward:
            detail::conv_forward(d, n.pad, a->data().data(), b->data().data(), out);
            break;
          case ConvMode::kInputGrad:
            detail::conv_input_grad(d, n.pad, a->data().data(), b->data().data(), out);
            break;
          case ConvMode::kKernelGrad:
            detail::conv_kernel_grad(d, n.pad, a->data().data(), b->data().data(), out);
            break;
        }
        break;
      }
      case OpKind::kSigmoid:
        for (std::size_t i = 0; i < size; ++i) {
          const double v = (*a)[i];
          // Split by sign so exp() never overflows.
          if (v >= 0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
          } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
          }
        }
        break;
      case OpKind::kLog:
        for (std::size_t i = 0; i < size; ++i) out[i] = std::log((*a)[i]);
        break;
      case OpKind::kExp:
        for (std::size_t i = 0; i < size; ++i) out[i] = std::exp((*a)[i]);
        break;
      case OpKind::kSquare:
        for (std::size_t i = 0; i < size; ++i) out[i] = (*a)[i] * (*a)[i];
        break;
      case OpKind::kSum:
        std::fill(out, out + size, 0.0);
        for (std::size_t i = 0; i < a->size(); ++i) out[n.index_map[i]] += (*a)[i];
        break;
      case OpKind::kMean: {
        double s = 0.0;
        for (double v : a->data()) s += v;
        out[0] = s / static_cast<double>(a->size());
        break;
      }
      case OpKind::kReshape:
        std::copy(a->data().begin(), a->data().end(), out);
        break;
      case OpKind::kBroadcast:
        for (std::size_t i = 0; i < size; ++i) out[i] = (*a)[n.index_map[i]];
        break;
      case OpKind::kSoftmax: {
        const std::size_t cols = a->shape().back();
        for (std::size_t r = 0; r < size / cols; ++r) {
          const double* in = a->data().data() + r * cols;
          double* o = out + r * cols;
          const double mx = *std::max_element(in, in + cols);
          double z = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            z += o[c];
          }
          for (std::size_t c = 0; c < cols; ++c) o[c] /= z;
        }
        break;
      }
    }
    for (std::size_t i = 0; i < size; ++i) {
      if (!std::isfinite(out[i])) throw NonFiniteError(id, n.op);
    }
  }

  static void eval_matmul(const Node& n, const Tensor& a, const Tensor& b, double* out) {
    const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
    const std::size_t m = n.trans_a ? ac : ar;
    const std::size_t k = n.trans_a ? ar : ac;
    const std::size_t cols = n.trans_b ? br : bc;
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    std::fill(out, out + m * cols, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      double* row = out + i * cols;
      for (std::size_t t = 0; t < k; ++t) {
        const double av = n.trans_a ? pa[t * ac + i] : pa[i * ac + t];
        if (av == 0.0) continue;
        if (n.trans_b) {
          for (std::size_t j = 0; j < cols; ++j) row[j] += av * pb[j * bc + t];
        } else {
          const double* brow = pb + t * bc;
          for (std::size_t j = 0; j < cols; ++j) row[j] += av * brow[j];
        }
      }
    }
  }

  void accumulate(std::vector<NodeId>& adjoint, NodeId target, Var contribution) {
    if (adjoint[target] == kNoNode) {
      adjoint[target] = contribution.id();
    } else {
      adjoint[target] = add(Var(this, adjoint[target]), contribution).id();
    }
  }

  // Emits the vector-Jacobian product of node `id` for upstream adjoint `g`.
  void backprop(NodeId id, Var g, const std::vector<char>& depends,
                std::vector<NodeId>& adjoint) {
    // Copy out what we need: appending nodes may reallocate nodes_.
    const OpKind op = nodes_[id].op;
    const NodeId lhs = nodes_[id].lhs;
    const NodeId rhs = nodes_[id].rhs;
    const bool ta = nodes_[id].trans_a;
    const bool tb = nodes_[id].trans_b;
    const ConvMode mode = nodes_[id].conv;
    const std::size_t pad = nodes_[id].pad;
    const double factor = nodes_[id].scalar;
    const Var a(this, lhs);
    const Var b(this, rhs);
    const Var y(this, id);
    const bool da = lhs != kNoNode && depends[lhs];
    const bool db = rhs != kNoNode && depends[rhs];

    switch (op) {
      case OpKind::kLeaf:
      case OpKind::kConstant:
        break;
      case OpKind::kAdd:
        if (da) accumulate(adjoint, lhs, g);
        if (db) accumulate(adjoint, rhs, g);
        break;
      case OpKind::kSub:
        if (da) accumulate(adjoint, lhs, g);
        if (db) accumulate(adjoint, rhs, scalar_mul(g, -1.0));
        break;
      case OpKind::kMul:
        if (da) accumulate(adjoint, lhs, mul(g, b));
        if (db) accumulate(adjoint, rhs, mul(g, a));
        break;
      case OpKind::kScalarMul:
        if (da) accumulate(adjoint, lhs, scalar_mul(g, factor));
        break;
      case OpKind::kMatMul:
        if (da) accumulate(adjoint, lhs, ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb));
        if (db) accumulate(adjoint, rhs, tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false));
        break;
      case OpKind::kConv2d:
        switch (mode) {
          case ConvMode::kForward:
            if (da) accumulate(adjoint, lhs, conv2d(g, b, pad, ConvMode::kInputGrad));
            if (db) accumulate(adjoint, rhs, conv2d(a, g, pad, ConvMode::kKernelGrad));
            break;
          case ConvMode::kInputGrad:
            if (da) accumulate(adjoint, lhs, conv2d(g, b, pad, ConvMode::kForward));
            if (db) accumulate(adjoint, rhs, conv2d(g, a, pad, ConvMode::kKernelGrad));
            break;
          case ConvMode::kKernelGrad:
            if (da) accumulate(adjoint, lhs, conv2d(b, g, pad, ConvMode::kInputGrad));
            if (db) accumulate(adjoint, rhs, conv2d(a, g, pad, ConvMode::kForward));
            break;
        }
        break;
      case OpKind::kSigmoid:
        // s' = s - s^2
        if (da) accumulate(adjoint, lhs, mul(g, sub(y, square(y))));
        break;
      case OpKind::kLog:
        // 1/x = exp(-log x)
        if (da) accumulate(adjoint, lhs, mul(g, exp(scalar_mul(y, -1.0))));
        break;
      case OpKind::kExp:
        if (da) accumulate(adjoint, lhs, mul(g, y));
        break;
      case OpKind::kSquare:
        if (da) accumulate(adjoint, lhs, scalar_mul(mul(g, a), 2.0));
        break;
      case OpKind::kSum:
        if (da) accumulate(adjoint, lhs, broadcast(g, value(a).shape()));
        break;
      case OpKind::kMean:
        if (da) {
          const double inv = 1.0 / static_cast<double>(value(a).size());
          accumulate(adjoint, lhs, scalar_mul(broadcast(g, value(a).shape()), inv));
        }
        break;
      case OpKind::kReshape:
        if (da) accumulate(adjoint, lhs, reshape(g, value(a).shape()));
        break;
      case OpKind::kBroadcast:
        if (da) accumulate(adjoint, lhs, sum(g, value(a).shape()));
        break;
      case OpKind::kSoftmax:
        if (da) {
          // y * (g - rowsum(g * y))
          Shape shape = value(y).shape();
          Shape keep = shape;
          keep.back() = 1;
          Var row = broadcast(sum(mul(g, y), keep), shape);
          accumulate(adjoint, lhs, mul(y, sub(g, row)));
        }
        break;
    }
  }

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaf_index_;
  std::uint64_t generation_ = 0;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }

// Expression sugar. Both operands must belong to the same graph.
inline Var operator+(Var a, Var b) { return a.graph()->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph()->sub(a, b); }
inline Var operator*(Var a, Var b) { return a.graph()->mul(a, b); }
inline Var operator*(double s, Var a) { return a.graph()->scalar_mul(a, s); }
inline Var operator*(Var a, double s) { return a.graph()->scalar_mul(a, s); }
inline Var operator-(Var a) { return a.graph()->scalar_mul(a, -1.0); }
inline Var sigmoid(Var a) { return a.graph()->sigmoid(a); }
inline Var log(Var a) { return a.graph()->log(a); }
inline Var exp(Var a) { return a.graph()->exp(a); }
inline Var square(Var a) { return a.graph()->square(a); }
inline Var softmax(Var a) { return a.graph()->softmax(a); }
inline Var sum(Var a, Shape target = {}) { return a.graph()->sum(a, std::move(target)); }
inline Var mean(Var a) { return a.graph()->mean(a); }
inline Var reshape(Var a, Shape target) { return a.graph()->reshape(a, std::move(target)); }
inline Var broadcast(Var a, Shape target) { return a.graph()->broadcast(a, std::move(target)); }
inline Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false) {
  return a.graph()->matmul(a, b, trans_a, trans_b);
}
inline Var conv2d(Var x, Var k, std::size_t pad = 0) { return x.graph()->conv2d(x, k, pad); }

/// Evaluates d(distance)/d(wrt) where `distance` was itself assembled from
/// gradient expressions: a second differentiation pass through the graph.
inline std::vector<Tensor> grad2(Graph& graph, Var distance, std::span<const Var> wrt) {
  GradResult r = graph.grad(distance, wrt);
  std::vector<Tensor> out;
  out.reserve(r.grads.size());
  for (Var g : r.grads) out.push_back(g.value());
  return out;
}

}  // namespace gradleak
