#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto an immutable node. Operations on tensors
// that require gradients append a node to the calling thread's tape; the
// node keeps its inputs alive, so a graph lives exactly as long as the
// tensors that reference it. backward() replays the reachable part of the
// tape in strict reverse append order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "signet/error.hpp"

namespace signet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor normal(Shape shape, double mean, double stddev, std::mt19937_64& rng);
  static Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  /// Extent of axis `axis`; negative values count from the back.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  /// Marks a leaf as a differentiation target. Only valid on leaves.
  Tensor& set_requires_grad(bool on = true);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Writable view of a leaf's values. Leaves that feed a live graph must not
  /// be mutated until that graph is released; optimizers call this between
  /// steps only.
  std::span<double> mutable_data();

  /// A leaf sharing no graph with this tensor, holding a copy of its values.
  Tensor detach() const;

  /// Reverse-mode sweep from a single-element tensor. Gradients of leaves
  /// accumulate across calls; interior gradients are recomputed.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_tensor(std::shared_ptr<detail::Node>);
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Backward rule for a custom operation: receives the op's output values,
/// the gradient flowing into the output and one buffer per input. Buffers of
/// inputs that do not require gradients are empty; the rule must add into
/// the others (never overwrite).
using BackwardFn = std::function<void(std::span<const double> out,
                                      std::span<const double> grad_out,
                                      std::span<const std::span<double>> grad_in)>;

/// Wraps precomputed output values as a graph node. Used by fused kernels
/// (signatures, attention softmax, losses) that supply their own gradient.
/// Non-finite output values raise DomainError naming `name`.
Tensor custom_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 BackwardFn backward, const char* name = "custom_op");

// ---------------------------------------------------------------------------
// Elementwise arithmetic with trailing-dimension broadcasting.

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { neg, exp, log, tanh, sigmoid, relu };

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(UnaryOp op, const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor pow(const Tensor& a, double exponent);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---------------------------------------------------------------------------
// Linear algebra.

/// Batched product of the two trailing axes: [.., m, k] x [.., k, n]. Leading
/// batch axes broadcast; a 2-D operand is shared across the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Reductions and shape manipulation.

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor softmax(const Tensor& a);      // along the last axis
Tensor log_softmax(const Tensor& a);  // along the last axis

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& a, int axis0, int axis1);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor stack(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
/// Removes `axis` by taking position `index` along it.
Tensor select(const Tensor& a, int axis, std::size_t index);
/// Gathers entries along axis 0.
Tensor index_select(const Tensor& a, std::span<const std::size_t> rows);
/// Reverses the order of entries along `axis`.
Tensor flip(const Tensor& a, int axis);

}  // namespace signet
