#pragma once

// Minimal dense reverse-mode autodiff over Eigen storage.
//
// A Tensor is a shared handle to a graph node. Ops build new nodes that keep
// their inputs alive and a closure that pushes the output gradient back into
// the inputs. Storage is row-major and contiguous; image tensors are (C, H, W).

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace mf2sf::tensor {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(enabled()) { enabled() = false; }
  ~NoGradGuard() { enabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool& enabled() {
    thread_local bool grad_enabled = true;
    return grad_enabled;
  }

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::string op;
  Shape shape;
  Vector value;
  Vector grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Vector& grad_buffer() {
    if (grad.size() != value.size()) grad = Vector::Zero(value.size());
    return grad;
  }
};

template <typename Scalar>
class Tensor {
 public:
  using NodeType = Node<Scalar>;
  using Vector = typename NodeType::Vector;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, Vector values) {
    check_size("constant", shape, values);
    auto n = std::make_shared<NodeType>();
    n->op = "constant";
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    const Index size = numel(shape);
    return constant(std::move(shape), Vector::Zero(size));
  }
  /// Leaf that accumulates gradient across backward passes.
  static Tensor parameter(Shape shape, Vector values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->op = "parameter";
    t.node_->requires_grad = true;
    return t;
  }
  static Tensor scalar(Scalar v) { return constant({}, Vector::Constant(1, v)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index size() const { return node_->value.size(); }
  const std::string& op() const { return node_->op; }

  const Vector& value() const { return node_->value; }
  Vector& mutable_value() { return node_->value; }
  const Vector& grad() const { return node_->grad_buffer(); }
  Vector& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Vector::Zero(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Row-major view over the last axis: (numel / last, last).
  ConstMatrixMap matrix(Index rows, Index cols) const { return ConstMatrixMap(node_->value.data(), rows, cols); }

  /// Reverse-mode sweep from this scalar. Leaves accumulate; interior grads are reset.
  void backward(Scalar seed = Scalar(1)) const {
    if (size() != 1) throw ShapeError("backward() needs a scalar root, got " + to_string(shape()));
    if (!node_->requires_grad) return;
    std::vector<NodeType*> order = topological_order();
    for (NodeType* n : order) {
      if (n->backward) n->grad = Vector::Zero(n->value.size());
    }
    node_->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

  /// Number of op nodes reachable from this tensor (leaves excluded).
  std::size_t graph_op_count() const {
    std::size_t count = 0;
    std::unordered_set<const NodeType*> seen;
    std::vector<const NodeType*> stack{node_.get()};
    while (!stack.empty()) {
      const NodeType* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      if (!n->inputs.empty() || (n->op != "constant" && n->op != "parameter")) ++count;
      for (const auto& in : n->inputs) stack.push_back(in.get());
    }
    return count;
  }

  const std::shared_ptr<NodeType>& node() const { return node_; }

  static void check_size(const char* op, const Shape& shape, const Vector& values) {
    if (numel(shape) != values.size()) {
      throw ShapeError(std::string(op) + ": shape " + to_string(shape) + " holds " +
                       std::to_string(numel(shape)) + " values, got " + std::to_string(values.size()));
    }
  }

 private:
  std::vector<NodeType*> topological_order() const {
    std::vector<NodeType*> order;
    std::unordered_set<NodeType*> visited;
    // Iterative post-order DFS restricted to nodes that need gradients.
    std::vector<std::pair<NodeType*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->inputs.size()) {
        NodeType* child = n->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    return order;
  }

  std::shared_ptr<NodeType> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

/// Creates an op node; records inputs and the backward closure only when a
/// gradient can flow.
template <typename Scalar, typename Backward>
Tensor<Scalar> make_op(std::string op, Shape shape, typename Node<Scalar>::Vector value,
                       std::vector<Tensor<Scalar>> inputs, Backward&& backward) {
  Tensor<Scalar>::check_size(op.c_str(), shape, value);
  auto n = std::make_shared<Node<Scalar>>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (NoGradGuard::enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::forward<Backward>(backward);
  }
  return Tensor<Scalar>(std::move(n));
}

template <typename Scalar>
typename Node<Scalar>::Vector* grad_of(Node<Scalar>& out, std::size_t i) {
  Node<Scalar>& in = *out.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <typename Scalar>
void require_same_shape(const char* op, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename Scalar>
void require_rank(const char* op, const Tensor<Scalar>& a, Index rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("add", a, b);
  return detail::make_op<Scalar>("add", a.shape(), a.value() + b.value(), {a, b}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad;
    if (auto* g = detail::grad_of(o, 1)) *g += o.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("sub", a, b);
  return detail::make_op<Scalar>("sub", a.shape(), a.value() - b.value(), {a, b}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad;
    if (auto* g = detail::grad_of(o, 1)) *g -= o.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape("mul", a, b);
  return detail::make_op<Scalar>("mul", a.shape(), a.value().cwiseProduct(b.value()), {a, b}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad.cwiseProduct(o.inputs[1]->value);
    if (auto* g = detail::grad_of(o, 1)) *g += o.grad.cwiseProduct(o.inputs[0]->value);
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return detail::make_op<Scalar>("scale", a.shape(), a.value() * s, {a}, [s](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad * s;
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return detail::make_op<Scalar>("relu", a.shape(), a.value().cwiseMax(Scalar(0)), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) {
      *g += (o.inputs[0]->value.array() > Scalar(0)).select(o.grad, Scalar(0)).matrix();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
  typename Node<Scalar>::Vector y = (Scalar(1) + (-a.value().array()).exp()).inverse().matrix();
  return detail::make_op<Scalar>("sigmoid", a.shape(), std::move(y), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) {
      *g += (o.grad.array() * o.value.array() * (Scalar(1) - o.value.array())).matrix();
    }
  });
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  return detail::make_op<Scalar>("log", a.shape(), a.value().array().log().matrix(), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += (o.grad.array() / o.inputs[0]->value.array()).matrix();
  });
}

/// Elementwise a^exponent.
template <typename Scalar>
Tensor<Scalar> pow(const Tensor<Scalar>& a, Scalar exponent) {
  return detail::make_op<Scalar>("pow", a.shape(), a.value().array().pow(exponent).matrix(), {a},
                                 [exponent](Node<Scalar>& o) {
                                   if (auto* g = detail::grad_of(o, 0)) {
                                     *g += (o.grad.array() * exponent *
                                            o.inputs[0]->value.array().pow(exponent - Scalar(1)))
                                               .matrix();
                                   }
                                 });
}

template <typename Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  return detail::make_op<Scalar>("square", a.shape(), a.value().array().square().matrix(), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += (Scalar(2) * o.grad.array() * o.inputs[0]->value.array()).matrix();
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  using V = typename Node<Scalar>::Vector;
  return detail::make_op<Scalar>("sum", {}, V::Constant(1, a.value().sum()), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) g->array() += o.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  using V = typename Node<Scalar>::Vector;
  if (a.size() == 0) throw ShapeError("mean: empty tensor " + to_string(a.shape()));
  const Scalar inv = Scalar(1) / static_cast<Scalar>(a.size());
  return detail::make_op<Scalar>("mean", {}, V::Constant(1, a.value().sum() * inv), {a}, [inv](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) g->array() += o.grad[0] * inv;
  });
}

/// Max over `axis`. When `valid` is non-empty it holds, per outer index (the
/// product of dims before `axis`), how many leading entries along `axis`
/// take part; an outer slot with zero valid entries yields 0. Gradient goes
/// to the first argmax.
template <typename Scalar>
Tensor<Scalar> max_over_axis(const Tensor<Scalar>& a, std::size_t axis, const std::vector<Index>& valid = {}) {
  if (axis >= a.shape().size()) {
    throw ShapeError("max_over_axis: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  }
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.shape().size(); ++i) inner *= a.shape()[i];
  const Index n = a.shape()[axis];
  if (!valid.empty() && static_cast<Index>(valid.size()) != outer) {
    throw ShapeError("max_over_axis: " + std::to_string(valid.size()) + " valid counts for " +
                     std::to_string(outer) + " outer slots of " + to_string(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));

  typename Node<Scalar>::Vector out = Node<Scalar>::Vector::Zero(outer * inner);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(outer * inner), Index{-1});
  const auto& x = a.value();
  for (Index o = 0; o < outer; ++o) {
    const Index len = valid.empty() ? n : std::min(valid[static_cast<std::size_t>(o)], n);
    for (Index i = 0; i < inner; ++i) {
      Index best = -1;
      for (Index k = 0; k < len; ++k) {
        const Index idx = (o * n + k) * inner + i;
        if (best < 0 || x[idx] > x[best]) best = idx;
      }
      if (best >= 0) {
        out[o * inner + i] = x[best];
        (*argmax)[static_cast<std::size_t>(o * inner + i)] = best;
      }
    }
  }
  return detail::make_op<Scalar>("max_over_axis", std::move(out_shape), std::move(out), {a}, [argmax](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) {
      for (std::size_t j = 0; j < argmax->size(); ++j) {
        if ((*argmax)[j] >= 0) (*g)[(*argmax)[j]] += o.grad[static_cast<Index>(j)];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return detail::make_op<Scalar>("reshape", std::move(shape), a.value(), {a}, [](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad;
  });
}

/// Concatenation along `axis`; all other dims must agree.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + to_string(ref));
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= ref[i];
  for (std::size_t i = axis + 1; i < ref.size(); ++i) inner *= ref[i];
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<Index> widths;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch " + to_string(s) + " vs " + to_string(ref));
    s[axis] = ref[axis];
    if (s != ref) throw ShapeError("concat: shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
    widths.push_back(p.shape()[axis] * inner);
    out_shape[axis] += p.shape()[axis];
  }
  const Index row = out_shape[axis] * inner;
  typename Node<Scalar>::Vector out(outer * row);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * row + offset, widths[k]) = parts[k].value().segment(o * widths[k], widths[k]);
    }
    offset += widths[k];
  }
  return detail::make_op<Scalar>("concat", std::move(out_shape), std::move(out), parts,
                                 [widths, outer, row](Node<Scalar>& o) {
                                   Index off = 0;
                                   for (std::size_t k = 0; k < widths.size(); ++k) {
                                     if (auto* g = detail::grad_of(o, k)) {
                                       for (Index r = 0; r < outer; ++r) {
                                         g->segment(r * widths[k], widths[k]) += o.grad.segment(r * row + off, widths[k]);
                                       }
                                     }
                                     off += widths[k];
                                   }
                                 });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m, k) x (k, n) -> (m, n).
template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dims differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  using RM = typename Tensor<Scalar>::RowMatrix;
  typename Node<Scalar>::Vector out(m * n);
  Eigen::Map<RM>(out.data(), m, n).noalias() = a.matrix(m, k) * b.matrix(k, n);
  return detail::make_op<Scalar>("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node<Scalar>& o) {
    Eigen::Map<const RM> go(o.grad.data(), m, n);
    if (auto* g = detail::grad_of(o, 0)) {
      Eigen::Map<RM>(g->data(), m, k).noalias() += go * Eigen::Map<const RM>(o.inputs[1]->value.data(), k, n).transpose();
    }
    if (auto* g = detail::grad_of(o, 1)) {
      Eigen::Map<RM>(g->data(), k, n).noalias() += Eigen::Map<const RM>(o.inputs[0]->value.data(), m, k).transpose() * go;
    }
  });
}

/// (m, n) + bias(n) broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  detail::require_rank("add_bias", x, 2);
  detail::require_rank("add_bias", bias, 1);
  const Index m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n) throw ShapeError("add_bias: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  using RM = typename Tensor<Scalar>::RowMatrix;
  typename Node<Scalar>::Vector out(m * n);
  Eigen::Map<RM>(out.data(), m, n) = x.matrix(m, n).rowwise() + bias.value().transpose();
  return detail::make_op<Scalar>("add_bias", x.shape(), std::move(out), {x, bias}, [m, n](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) *g += o.grad;
    if (auto* g = detail::grad_of(o, 1)) *g += Eigen::Map<const RM>(o.grad.data(), m, n).colwise().sum().transpose();
  });
}

namespace detail {

struct ConvGeometry {
  Index in_c, in_h, in_w, out_c, k, stride, pad, out_h, out_w;
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
  const Index plane = g.out_h * g.out_w;
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        Scalar* dst = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          Scalar* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(row, row + g.out_w, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * g.in_h + iy) * g.in_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride + kx - g.pad;
            row[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* dx) {
  const Index plane = g.out_h * g.out_w;
  for (Index c = 0; c < g.in_c; ++c) {
    for (Index ky = 0; ky < g.k; ++ky) {
      for (Index kx = 0; kx < g.k; ++kx) {
        const Scalar* src = cols + ((c * g.k + ky) * g.k + kx) * plane;
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          Scalar* dst = dx + (c * g.in_h + iy) * g.in_w;
          const Scalar* row = src + oy * g.out_w;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.in_w) dst[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D convolution with "same" padding: x (Cin, H, W), weight (Cout, Cin, k, k)
/// with odd k, bias (Cout), stride 1 or 2. Output (Cout, ceil(H/s), ceil(W/s)).
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, Index stride) {
  detail::require_rank("conv2d", x, 3);
  detail::require_rank("conv2d", weight, 4);
  detail::require_rank("conv2d", bias, 1);
  const Index k = weight.dim(2);
  if (weight.dim(1) != x.dim(0) || weight.dim(3) != k || k % 2 == 0 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv2d: incompatible input " + to_string(x.shape()) + ", weight " + to_string(weight.shape()) +
                     ", bias " + to_string(bias.shape()));
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(0), k, stride, k / 2, 0, 0};
  g.out_h = (g.in_h + stride - 1) / stride;
  g.out_w = (g.in_w + stride - 1) / stride;

  using RM = typename Tensor<Scalar>::RowMatrix;
  const Index patch = g.in_c * k * k;
  const Index plane = g.out_h * g.out_w;
  auto cols = std::make_shared<RM>(patch, plane);
  detail::im2col(x.value().data(), g, cols->data());

  typename Node<Scalar>::Vector out(g.out_c * plane);
  Eigen::Map<RM> out_m(out.data(), g.out_c, plane);
  out_m.noalias() = weight.matrix(g.out_c, patch) * (*cols);
  out_m.colwise() += bias.value();

  return detail::make_op<Scalar>(
      "conv2d", {g.out_c, g.out_h, g.out_w}, std::move(out), {x, weight, bias}, [g, cols, patch, plane](Node<Scalar>& o) {
        Eigen::Map<const RM> go(o.grad.data(), g.out_c, plane);
        if (auto* gw = detail::grad_of(o, 1)) {
          Eigen::Map<RM>(gw->data(), g.out_c, patch).noalias() += go * cols->transpose();
        }
        if (auto* gb = detail::grad_of(o, 2)) *gb += go.rowwise().sum();
        if (auto* gx = detail::grad_of(o, 0)) {
          RM dcols(patch, plane);
          dcols.noalias() = Eigen::Map<const RM>(o.inputs[1]->value.data(), g.out_c, patch).transpose() * go;
          detail::col2im(dcols.data(), g, gx->data());
        }
      });
}

/// Nearest-neighbour 2x upsampling of (C, H, W).
template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x) {
  detail::require_rank("upsample2x", x, 3);
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  typename Node<Scalar>::Vector out(c * 4 * h * w);
  const auto& v = x.value();
  for (Index ch = 0; ch < c; ++ch) {
    for (Index y = 0; y < 2 * h; ++y) {
      for (Index xx = 0; xx < 2 * w; ++xx) out[(ch * 2 * h + y) * 2 * w + xx] = v[(ch * h + y / 2) * w + xx / 2];
    }
  }
  return detail::make_op<Scalar>("upsample2x", {c, 2 * h, 2 * w}, std::move(out), {x}, [c, h, w](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) {
      for (Index ch = 0; ch < c; ++ch) {
        for (Index y = 0; y < 2 * h; ++y) {
          for (Index xx = 0; xx < 2 * w; ++xx) (*g)[(ch * h + y / 2) * w + xx / 2] += o.grad[(ch * 2 * h + y) * 2 * w + xx];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// BEV scatter / gather

/// Places per-pillar rows (K, C) into a zero (C, H, W) image at flat pixel
/// indices y * W + x. Duplicate indices add.
template <typename Scalar>
Tensor<Scalar> scatter_to_grid(const Tensor<Scalar>& pillars, const std::vector<Index>& pixels, Index height, Index width) {
  detail::require_rank("scatter_to_grid", pillars, 2);
  const Index k = pillars.dim(0), c = pillars.dim(1), plane = height * width;
  if (static_cast<Index>(pixels.size()) != k) {
    throw ShapeError("scatter_to_grid: " + std::to_string(pixels.size()) + " indices for " + to_string(pillars.shape()));
  }
  for (Index p : pixels) {
    if (p < 0 || p >= plane) throw ShapeError("scatter_to_grid: pixel index " + std::to_string(p) + " outside grid");
  }
  typename Node<Scalar>::Vector out = Node<Scalar>::Vector::Zero(c * plane);
  const auto& v = pillars.value();
  for (Index i = 0; i < k; ++i) {
    for (Index ch = 0; ch < c; ++ch) out[ch * plane + pixels[static_cast<std::size_t>(i)]] += v[i * c + ch];
  }
  return detail::make_op<Scalar>("scatter_to_grid", {c, height, width}, std::move(out), {pillars},
                                 [pixels, k, c, plane](Node<Scalar>& o) {
                                   if (auto* g = detail::grad_of(o, 0)) {
                                     for (Index i = 0; i < k; ++i) {
                                       for (Index ch = 0; ch < c; ++ch) {
                                         (*g)[i * c + ch] += o.grad[ch * plane + pixels[static_cast<std::size_t>(i)]];
                                       }
                                     }
                                   }
                                 });
}

/// Reads (K, C) rows out of a (C, H, W) image at flat pixel indices.
template <typename Scalar>
Tensor<Scalar> gather_from_grid(const Tensor<Scalar>& image, const std::vector<Index>& pixels) {
  detail::require_rank("gather_from_grid", image, 3);
  const Index c = image.dim(0), plane = image.dim(1) * image.dim(2);
  const auto k = static_cast<Index>(pixels.size());
  for (Index p : pixels) {
    if (p < 0 || p >= plane) throw ShapeError("gather_from_grid: pixel index " + std::to_string(p) + " outside grid");
  }
  typename Node<Scalar>::Vector out(k * c);
  for (Index i = 0; i < k; ++i) {
    for (Index ch = 0; ch < c; ++ch) out[i * c + ch] = image.value()[ch * plane + pixels[static_cast<std::size_t>(i)]];
  }
  return detail::make_op<Scalar>("gather_from_grid", {k, c}, std::move(out), {image}, [pixels, k, c, plane](Node<Scalar>& o) {
    if (auto* g = detail::grad_of(o, 0)) {
      for (Index i = 0; i < k; ++i) {
        for (Index ch = 0; ch < c; ++ch) (*g)[ch * plane + pixels[static_cast<std::size_t>(i)]] += o.grad[i * c + ch];
      }
    }
  });
}

}  // namespace mf2sf::tensor
