#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// Tensors are immutable handles onto a graph node. Every op produces a fresh
// node; when any input requires a gradient, the node keeps its inputs and a
// backward rule. Node ids are allocated monotonically, so creation order is a
// valid topological order of the graph and backward simply walks the reachable
// nodes in descending id order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace freqlens::ad {

using Shape = std::vector<std::size_t>;
using NodeId = std::uint64_t;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Matmul,
  Sum,
  SumAxis,
  Mean,
  Square,
  Abs,
  Cos,
  Sigmoid,
  Relu,
  Log,
  Exp,
  Sqrt,
  ClampMin,
  Neg,
  Concat,
  Slice,
  Broadcast,
  Reshape,
  SwapAxes,
  IndexSelect,
  GatherRows,
  Softmax,
  StopGradient,
};

std::string_view op_name(OpKind kind);

/// Raised when operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for values outside an op's domain (log of nonpositive, NaN sort keys).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {
struct Node;
struct Access;
}  // namespace detail

class Gradients;
class Tensor;
Gradients backward(const Tensor& loss);

class Tensor {
 public:
  /// Scalar zero constant.
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const;
  std::size_t dim() const;
  /// Size of one axis; negative axes count from the end.
  std::size_t size(std::ptrdiff_t axis) const;
  std::size_t numel() const;
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double operator[](std::size_t flat_index) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  NodeId id() const;
  OpKind kind() const;

 private:
  explicit Tensor(std::shared_ptr<const detail::Node> node);
  std::shared_ptr<const detail::Node> node_;

  friend class Tape;
  friend struct detail::Access;
};

/// Ordered record of the differentiable operations reachable from a root.
class Tape {
 public:
  struct Entry {
    NodeId id;
    OpKind kind;
    std::vector<NodeId> inputs;
  };

  static Tape record(const Tensor& root);

  std::size_t size() const { return order_.size(); }
  std::vector<Entry> entries() const;

 private:
  std::vector<std::shared_ptr<const detail::Node>> order_;  // ascending id

  friend class Gradients;
  friend Gradients backward(const Tensor& loss);
};

class Gradients {
 public:
  /// Gradient with the shape of `t`; zeros when `t` did not influence the loss.
  Tensor of(const Tensor& t) const;
  bool contains(const Tensor& t) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, std::vector<double>> grads_;
  std::unordered_map<NodeId, Shape> shapes_;

  friend Gradients backward(const Tensor& loss);
};

/// Reverse sweep from a scalar loss. Gradients of nodes used several times are summed.
Gradients backward(const Tensor& loss);

// Elementwise ops broadcast with numpy semantics.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

/// Batched matrix product over the last two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::ptrdiff_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);

Tensor square(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);
/// max(x, lo) elementwise; the gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double lo);
Tensor neg(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, std::ptrdiff_t axis);
/// Half-open range [start, stop) along `axis`.
Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t stop);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, Shape shape);
Tensor swap_axes(const Tensor& x, std::ptrdiff_t a, std::ptrdiff_t b);
Tensor index_select(const Tensor& x, std::ptrdiff_t axis, std::span<const std::size_t> indices);
/// x: [B, N, ...], rows[b] lists K indices into axis 1 -> [B, K, ...].
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows);
Tensor softmax(const Tensor& x);  // along the last axis
/// Forward identity that blocks gradient flow.
Tensor stop_gradient(const Tensor& x);

struct SortResult {
  Tensor values;
  std::vector<std::size_t> permutation;  // values[j] == input[permutation[j]]
};

/// Differentiable ascending sort of a vector; the permutation is treated as constant.
SortResult argsort_ascending(const Tensor& values);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }

struct GradientCheck {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

using MultiScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Compares analytic gradients with central differences at `point`.
/// Error per coordinate is |analytic - numeric| / max(1, |analytic|).
GradientCheck check_gradients(const MultiScalarFn& f, std::span<const Tensor> point, double eps);
GradientCheck check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                              double eps);

}  // namespace freqlens::ad
