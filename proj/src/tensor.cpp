#include "freqlens/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <numeric>
#include <sstream>

namespace freqlens::ad {

namespace detail {

using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

struct Node {
  NodeId id = 0;
  OpKind kind = OpKind::Leaf;
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<const Node>> inputs;
  BackwardFn backward;
};

namespace {
std::atomic<NodeId> next_id{1};
}

struct Access {
  static const Node& node(const Tensor& t) { return *t.node_; }
  static const std::shared_ptr<const Node>& ptr(const Tensor& t) { return t.node_; }

  // Builds an op output. Inputs and the backward rule are kept only when some
  // input participates in differentiation.
  static Tensor make(OpKind kind, Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                     BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->id = next_id.fetch_add(1, std::memory_order_relaxed);
    node->kind = kind;
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad =
        std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (node->requires_grad) {
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node_);
      node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
  }
};

}  // namespace detail

using detail::Access;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Matmul: return "matmul";
    case OpKind::Sum: return "sum";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::Mean: return "mean";
    case OpKind::Square: return "square";
    case OpKind::Abs: return "abs";
    case OpKind::Cos: return "cos";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Relu: return "relu";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::Neg: return "neg";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Reshape: return "reshape";
    case OpKind::SwapAxes: return "swap_axes";
    case OpKind::IndexSelect: return "index_select";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Softmax: return "softmax";
    case OpKind::StopGradient: return "stop_gradient";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (freqlens::ad::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + freqlens::ad::to_string(shape) + " holds " +
                     std::to_string(freqlens::ad::numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = detail::next_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node_ = std::move(node);
}

Tensor::Tensor(std::shared_ptr<const detail::Node> node) : node_(std::move(node)) {}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = freqlens::ad::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::dim() const { return node_->shape.size(); }

std::size_t Tensor::size(std::ptrdiff_t axis) const {
  const auto r = static_cast<std::ptrdiff_t>(dim());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("size: axis out of range for " + freqlens::ad::to_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const double> Tensor::data() const { return node_->value; }
std::vector<double> Tensor::to_vector() const { return node_->value; }
double Tensor::operator[](std::size_t i) const { return node_->value.at(i); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + freqlens::ad::to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
NodeId Tensor::id() const { return node_->id; }
OpKind Tensor::kind() const { return node_->kind; }

// ---------------------------------------------------------------------------
// Tape and backward

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_map<NodeId, bool> seen;
  std::vector<const std::shared_ptr<const detail::Node>*> stack{&root.node_};
  while (!stack.empty()) {
    const auto& n = *stack.back();
    stack.pop_back();
    if (!n->requires_grad || seen[n->id]) continue;
    seen[n->id] = true;
    tape.order_.push_back(n);
    for (const auto& in : n->inputs) stack.push_back(&in);
  }
  std::sort(tape.order_.begin(), tape.order_.end(), [](const auto& a, const auto& b) { return a->id < b->id; });
  return tape;
}

std::vector<Tape::Entry> Tape::entries() const {
  std::vector<Entry> out;
  out.reserve(order_.size());
  for (const auto& n : order_) {
    Entry e{n->id, n->kind, {}};
    for (const auto& in : n->inputs) e.inputs.push_back(in->id);
    out.push_back(std::move(e));
  }
  return out;
}

Tensor Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

bool Gradients::contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }

Gradients backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  Gradients out;
  const Tape tape = Tape::record(loss);
  if (tape.size() == 0) return out;

  for (const auto& n : tape.order_) {
    out.grads_.emplace(n->id, std::vector<double>(n->value.size(), 0.0));
    out.shapes_.emplace(n->id, n->shape);
  }
  out.grads_[loss.id()][0] = 1.0;

  std::vector<double*> grad_in;
  for (auto it = tape.order_.rbegin(); it != tape.order_.rend(); ++it) {
    const auto& n = **it;
    if (!n.backward) continue;
    grad_in.assign(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (n.inputs[i]->requires_grad) grad_in[i] = out.grads_[n.inputs[i]->id].data();
    }
    n.backward(out.grads_[n.id], grad_in);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

std::size_t norm_axis(std::ptrdiff_t axis, std::size_t rank, OpKind kind) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op_name(kind)) + ": axis out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(axis);
}

Shape broadcast_shapes(const Shape& a, const Shape& b, OpKind kind) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` laid over `out`, zero on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t o = i + (out.size() - in.size());
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                        F&& f) {
  const std::size_t n = numel(out);
  const std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

// Elementwise binary op. `fwd(x, y)` is the value, `dx(x, y, z)` and `dy(x, y, z)`
// the local partials.
template <class Fwd, class Dx, class Dy>
Tensor binary(OpKind kind, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), kind);
  const auto xa = a.data();
  const auto xb = b.data();
  std::vector<double> z(numel(out_shape));

  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = fwd(xa[i], xb[i]);
    return Access::make(kind, out_shape, std::move(z), {a, b},
                        [a, b, fwd, dx, dy](std::span<const double> g, std::span<double* const> gin) {
                          const auto va = a.data();
                          const auto vb = b.data();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double zi = fwd(va[i], vb[i]);
                            if (gin[0]) gin[0][i] += g[i] * dx(va[i], vb[i], zi);
                            if (gin[1]) gin[1][i] += g[i] * dy(va[i], vb[i], zi);
                          }
                        });
  }

  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { z[o] = fwd(xa[ia], xb[ib]); });
  return Access::make(kind, out_shape, std::move(z), {a, b},
                      [a, b, out_shape, sa, sb, fwd, dx, dy](std::span<const double> g, std::span<double* const> gin) {
                        const auto va = a.data();
                        const auto vb = b.data();
                        for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                          const double zi = fwd(va[ia], vb[ib]);
                          if (gin[0]) gin[0][ia] += g[o] * dx(va[ia], vb[ib], zi);
                          if (gin[1]) gin[1][ib] += g[o] * dy(va[ia], vb[ib], zi);
                        });
                      });
}

// Elementwise unary op with local derivative `d(x, y)`.
template <class Fwd, class D>
Tensor unary(OpKind kind, const Tensor& x, Fwd fwd, D d) {
  const auto v = x.data();
  std::vector<double> y(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) y[i] = fwd(v[i]);
  auto out_y = std::make_shared<const std::vector<double>>(y);
  return Access::make(kind, x.shape(), std::move(y), {x},
                      [x, out_y, d](std::span<const double> g, std::span<double* const> gin) {
                        const auto v = x.data();
                        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * d(v[i], (*out_y)[i]);
                      });
}

// outer x axis x inner factorisation of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t axis = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.axis = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::Add, a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::Sub, a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::Mul, a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      OpKind::Div, a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      OpKind::Square, x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      OpKind::Abs, x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor cos(const Tensor& x) {
  return unary(
      OpKind::Cos, x, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      OpKind::Sigmoid, x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      OpKind::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
  const auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0)) {
      throw DomainError("log: nonpositive input " + std::to_string(v[i]) + " at index " + std::to_string(i));
    }
  }
  return unary(
      OpKind::Log, x, [](double t) { return std::log(t); }, [](double t, double) { return 1.0 / t; });
}

Tensor exp(const Tensor& x) {
  return unary(
      OpKind::Exp, x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& x) {
  const auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) throw DomainError("sqrt: negative input " + std::to_string(v[i]) + " at index " + std::to_string(i));
  }
  return unary(
      OpKind::Sqrt, x, [](double t) { return std::sqrt(t); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      OpKind::ClampMin, x, [lo](double t) { return t > lo ? t : lo; },
      [lo](double t, double) { return t > lo ? 1.0 : 0.0; });
}

Tensor neg(const Tensor& x) {
  return unary(
      OpKind::Neg, x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t m = a.size(-2);
  const std::size_t k = a.size(-1);
  const std::size_t n = b.size(-1);
  if (b.size(-2) != k) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = broadcast_shapes(batch_a, batch_b, OpKind::Matmul);
  const auto sa = broadcast_strides(batch_a, batch);
  const auto sb = broadcast_strides(batch_b, batch);

  // Matrix offsets per output batch entry.
  auto offsets = std::make_shared<std::vector<std::pair<std::size_t, std::size_t>>>();
  offsets->reserve(numel(batch));
  for_each_broadcast(batch, sa, sb,
                     [&](std::size_t, std::size_t ia, std::size_t ib) { offsets->emplace_back(ia * m * k, ib * k * n); });

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> c(numel(out_shape), 0.0);
  const auto va = a.data();
  const auto vb = b.data();
  for (std::size_t q = 0; q < offsets->size(); ++q) {
    const double* A = va.data() + (*offsets)[q].first;
    const double* B = vb.data() + (*offsets)[q].second;
    double* C = c.data() + q * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* Brow = B + p * n;
        double* Crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Crow[j] += aip * Brow[j];
      }
    }
  }

  return Access::make(OpKind::Matmul, std::move(out_shape), std::move(c), {a, b},
                      [a, b, offsets, m, k, n](std::span<const double> g, std::span<double* const> gin) {
                        const auto va = a.data();
                        const auto vb = b.data();
                        for (std::size_t q = 0; q < offsets->size(); ++q) {
                          const double* A = va.data() + (*offsets)[q].first;
                          const double* B = vb.data() + (*offsets)[q].second;
                          const double* G = g.data() + q * m * n;
                          if (gin[0]) {
                            double* dA = gin[0] + (*offsets)[q].first;
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                double acc = 0.0;
                                for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
                                dA[i * k + p] += acc;
                              }
                            }
                          }
                          if (gin[1]) {
                            double* dB = gin[1] + (*offsets)[q].second;
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                const double aip = A[i * k + p];
                                if (aip == 0.0) continue;
                                for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += aip * G[i * n + j];
                              }
                            }
                          }
                        }
                      });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const std::size_t n = x.numel();
  return Access::make(OpKind::Sum, {}, {s}, {x}, [n](std::span<const double> g, std::span<double* const> gin) {
    for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
  });
}

Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis_in, bool keepdim) {
  const std::size_t axis = norm_axis(axis_in, x.dim(), OpKind::SumAxis);
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<double> y(s.outer * s.inner, 0.0);
  const auto v = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.axis; ++a)
      for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += v[(o * s.axis + a) * s.inner + i];
  return Access::make(OpKind::SumAxis, std::move(out_shape), std::move(y), {x},
                      [s](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t a = 0; a < s.axis; ++a)
                            for (std::size_t i = 0; i < s.inner; ++i)
                              gin[0][(o * s.axis + a) * s.inner + i] += g[o * s.inner + i];
                      });
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Access::make(OpKind::Mean, {}, {s / static_cast<double>(n)}, {x},
                      [n](std::span<const double> g, std::span<double* const> gin) {
                        const double gi = g[0] / static_cast<double>(n);
                        for (std::size_t i = 0; i < n; ++i) gin[0][i] += gi;
                      });
}

// ---------------------------------------------------------------------------
// Structural ops

Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t axis = norm_axis(axis_in, parts[0].dim(), OpKind::Concat);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = parts[0].shape();
    if (a.size() != b.size()) {
      throw ShapeError("concat: shape mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    a[axis] = b[axis] = 0;
    if (a != b) throw ShapeError("concat: shape mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    widths.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<double> y(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const auto v = parts[q].data();
    const std::size_t w = widths[q];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(v.data() + o * w * s.inner, w * s.inner, y.data() + (o * s.axis + offset) * s.inner);
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Access::make(OpKind::Concat, std::move(out_shape), std::move(y), inputs,
                      [s, widths](std::span<const double> g, std::span<double* const> gin) {
                        std::size_t offset = 0;
                        for (std::size_t q = 0; q < widths.size(); ++q) {
                          const std::size_t w = widths[q];
                          if (gin[q]) {
                            for (std::size_t o = 0; o < s.outer; ++o)
                              for (std::size_t e = 0; e < w * s.inner; ++e)
                                gin[q][o * w * s.inner + e] += g[(o * s.axis + offset) * s.inner + e];
                          }
                          offset += w;
                        }
                      });
}

Tensor slice(const Tensor& x, std::ptrdiff_t axis_in, std::size_t start, std::size_t stop) {
  const std::size_t axis = norm_axis(axis_in, x.dim(), OpKind::Slice);
  if (start > stop || stop > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(stop) + ") out of bounds for " +
                     to_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t w = stop - start;
  Shape out_shape = x.shape();
  out_shape[axis] = w;
  std::vector<double> y(numel(out_shape));
  const auto v = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(v.data() + (o * s.axis + start) * s.inner, w * s.inner, y.data() + o * w * s.inner);
  return Access::make(OpKind::Slice, std::move(out_shape), std::move(y), {x},
                      [s, start, w](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t e = 0; e < w * s.inner; ++e)
                            gin[0][(o * s.axis + start) * s.inner + e] += g[o * w * s.inner + e];
                      });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape, OpKind::Broadcast) != shape) {
    throw ShapeError("broadcast: shape mismatch " + to_string(x.shape()) + " vs " + to_string(shape));
  }
  const auto sx = broadcast_strides(x.shape(), shape);
  const std::vector<std::size_t> none(shape.size(), 0);
  std::vector<double> y(numel(shape));
  const auto v = x.data();
  for_each_broadcast(shape, sx, none, [&](std::size_t o, std::size_t ix, std::size_t) { y[o] = v[ix]; });
  return Access::make(OpKind::Broadcast, shape, std::move(y), {x},
                      [shape, sx, none](std::span<const double> g, std::span<double* const> gin) {
                        for_each_broadcast(shape, sx, none,
                                           [&](std::size_t o, std::size_t ix, std::size_t) { gin[0][ix] += g[o]; });
                      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: shape mismatch " + to_string(x.shape()) + " vs " + to_string(shape));
  }
  return Access::make(OpKind::Reshape, std::move(shape), x.to_vector(), {x},
                      [](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i];
                      });
}

Tensor swap_axes(const Tensor& x, std::ptrdiff_t a_in, std::ptrdiff_t b_in) {
  const std::size_t a = norm_axis(a_in, x.dim(), OpKind::SwapAxes);
  const std::size_t b = norm_axis(b_in, x.dim(), OpKind::SwapAxes);
  Shape out_shape = x.shape();
  std::swap(out_shape[a], out_shape[b]);
  // Input strides permuted into output axis order.
  std::vector<std::size_t> in_strides(x.dim(), 1);
  for (std::size_t i = x.dim(); i-- > 1;) in_strides[i - 1] = in_strides[i] * x.shape()[i];
  std::swap(in_strides[a], in_strides[b]);
  auto map = std::make_shared<std::vector<std::size_t>>(numel(out_shape));
  const std::vector<std::size_t> none(out_shape.size(), 0);
  for_each_broadcast(out_shape, in_strides, none, [&](std::size_t o, std::size_t ix, std::size_t) { (*map)[o] = ix; });
  std::vector<double> y(map->size());
  const auto v = x.data();
  for (std::size_t o = 0; o < y.size(); ++o) y[o] = v[(*map)[o]];
  return Access::make(OpKind::SwapAxes, std::move(out_shape), std::move(y), {x},
                      [map](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t o = 0; o < g.size(); ++o) gin[0][(*map)[o]] += g[o];
                      });
}

Tensor index_select(const Tensor& x, std::ptrdiff_t axis_in, std::span<const std::size_t> indices) {
  const std::size_t axis = norm_axis(axis_in, x.dim(), OpKind::IndexSelect);
  const AxisSplit s = split_at(x.shape(), axis);
  for (auto i : indices) {
    if (i >= s.axis) {
      throw ShapeError("index_select: index " + std::to_string(i) + " out of range for " + to_string(x.shape()));
    }
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Shape out_shape = x.shape();
  out_shape[axis] = idx.size();
  std::vector<double> y(numel(out_shape));
  const auto v = x.data();
  const std::size_t k = idx.size();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(v.data() + (o * s.axis + idx[j]) * s.inner, s.inner, y.data() + (o * k + j) * s.inner);
  return Access::make(OpKind::IndexSelect, std::move(out_shape), std::move(y), {x},
                      [s, idx](std::span<const double> g, std::span<double* const> gin) {
                        const std::size_t k = idx.size();
                        for (std::size_t o = 0; o < s.outer; ++o)
                          for (std::size_t j = 0; j < k; ++j)
                            for (std::size_t e = 0; e < s.inner; ++e)
                              gin[0][(o * s.axis + idx[j]) * s.inner + e] += g[(o * k + j) * s.inner + e];
                      });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows) {
  if (x.dim() < 2 || rows.size() != x.shape()[0]) {
    throw ShapeError("gather_rows: expected " + std::to_string(rows.size()) + " batch rows, got " + to_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const std::size_t k = batch ? rows[0].size() : 0;
  const std::size_t inner = numel(x.shape()) / std::max<std::size_t>(1, batch * n);
  for (const auto& r : rows) {
    if (r.size() != k) throw ShapeError("gather_rows: ragged index rows");
    for (auto i : r)
      if (i >= n) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of range for " + to_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[1] = k;
  std::vector<double> y(numel(out_shape));
  const auto v = x.data();
  for (std::size_t bi = 0; bi < batch; ++bi)
    for (std::size_t j = 0; j < k; ++j)
      std::copy_n(v.data() + (bi * n + rows[bi][j]) * inner, inner, y.data() + (bi * k + j) * inner);
  return Access::make(OpKind::GatherRows, std::move(out_shape), std::move(y), {x},
                      [rows, n, k, inner](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t bi = 0; bi < rows.size(); ++bi)
                          for (std::size_t j = 0; j < k; ++j)
                            for (std::size_t e = 0; e < inner; ++e)
                              gin[0][(bi * n + rows[bi][j]) * inner + e] += g[(bi * k + j) * inner + e];
                      });
}

Tensor softmax(const Tensor& x) {
  if (x.dim() == 0) throw ShapeError("softmax: scalar input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(1, width);
  std::vector<double> y(x.numel());
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data() + r * width;
    double* out = y.data() + r * width;
    const double mx = *std::max_element(in, in + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (out[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < width; ++j) out[j] /= z;
  }
  auto out_y = std::make_shared<const std::vector<double>>(y);
  return Access::make(OpKind::Softmax, x.shape(), std::move(y), {x},
                      [out_y, rows, width](std::span<const double> g, std::span<double* const> gin) {
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* s = out_y->data() + r * width;
                          const double* gr = g.data() + r * width;
                          double dot = 0.0;
                          for (std::size_t j = 0; j < width; ++j) dot += gr[j] * s[j];
                          for (std::size_t j = 0; j < width; ++j) gin[0][r * width + j] += s[j] * (gr[j] - dot);
                        }
                      });
}

Tensor stop_gradient(const Tensor& x) { return Tensor(x.shape(), x.to_vector()); }

SortResult argsort_ascending(const Tensor& values) {
  if (values.dim() != 1) throw ShapeError("argsort_ascending: expected a vector, got " + to_string(values.shape()));
  const auto v = values.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isnan(v[i])) throw DomainError("argsort_ascending: NaN at index " + std::to_string(i));
  }
  std::vector<std::size_t> perm(v.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  return {index_select(values, 0, perm), perm};
}

// ---------------------------------------------------------------------------
// Gradient checking

GradientCheck check_gradients(const MultiScalarFn& f, std::span<const Tensor> point, double eps) {
  std::vector<Tensor> params;
  params.reserve(point.size());
  for (const auto& p : point) params.emplace_back(p.shape(), p.to_vector(), true);

  const Tensor loss = f(params);
  const Gradients grads = backward(loss);

  GradientCheck result;
  std::vector<Tensor> probe(params.size());
  for (std::size_t q = 0; q < params.size(); ++q) probe[q] = Tensor(params[q].shape(), params[q].to_vector());

  for (std::size_t q = 0; q < params.size(); ++q) {
    const auto analytic = grads.of(params[q]).to_vector();
    std::vector<double> base = params[q].to_vector();
    for (std::size_t i = 0; i < base.size(); ++i) {
      auto eval_at = [&](double delta) {
        std::vector<double> shifted = base;
        shifted[i] += delta;
        probe[q] = Tensor(params[q].shape(), std::move(shifted));
        return f(probe).item();
      };
      const double numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      probe[q] = Tensor(params[q].shape(), base);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      if (err > result.max_relative_error || std::isnan(err)) {
        result = {std::isnan(err) ? std::numeric_limits<double>::infinity() : err, q, i, analytic[i], numeric};
      }
    }
  }
  return result;
}

GradientCheck check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& point, double eps) {
  const Tensor pts[] = {point};
  return check_gradients([&](std::span<const Tensor> xs) { return f(xs[0]); }, pts, eps);
}

}  // namespace freqlens::ad
