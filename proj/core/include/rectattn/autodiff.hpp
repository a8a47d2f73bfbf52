#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "rectattn/tensor.hpp"

namespace rectattn {

using NodeId = std::size_t;

class Tape;
class Gradients;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  NodeId id() const { return id_; }
  Tape& tape() const;
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

 private:
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  NodeId id_ = 0;

  friend class Tape;
};

/// View of the reverse sweep handed to backward closures.
class GradSink {
 public:
  const Tensor& value(NodeId id) const;
  /// Gradient accumulator of `id`, zero-initialized on first access.
  /// nullptr when the node does not participate in differentiation.
  Tensor* grad(NodeId id);

 private:
  GradSink(const Tape& tape, std::vector<Tensor>& grads, std::vector<char>& touched)
      : tape_(tape), grads_(grads), touched_(touched) {}

  const Tape& tape_;
  std::vector<Tensor>& grads_;
  std::vector<char>& touched_;

  friend Gradients backward(const Var& loss);
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

/// Records a single forward computation for reverse-mode differentiation.
/// One tape per training step; nodes are appended in topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameter or input we want gradients for).
  Var leaf(Tensor value);
  /// A non-participating input.
  Var constant(Tensor value);
  /// Appends the result of an operation. The backward closure is kept only
  /// when at least one input participates.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }
  bool is_leaf(NodeId id) const { return nodes_[id].leaf; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  std::deque<Node> nodes_;

  friend Gradients backward(const Var& loss);
};

/// Gradients of a scalar loss with respect to the participating leaves.
class Gradients {
 public:
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  const Tensor* find(const Var& v) const;
  const Tensor& at(const Var& v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;

  friend Gradients backward(const Var& loss);
};

/// Reverse sweep from a scalar loss. Throws ShapeError if the loss is not a
/// scalar and DomainError if it does not depend on any leaf.
Gradients backward(const Var& loss);

// ---- elementwise -----------------------------------------------------------

enum class UnaryKind { sigmoid, relu, tanh, softplus, square, neg, sin, cos, exp };
enum class BinaryKind { add, sub, mul, div };

Var unary(UnaryKind kind, const Var& x);
/// Elementwise with numpy-style broadcasting (right-aligned, extents equal or 1).
/// Division throws DomainError on a zero divisor.
Var binary(BinaryKind kind, const Var& a, const Var& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

inline Var sigmoid(const Var& x) { return unary(UnaryKind::sigmoid, x); }
inline Var relu(const Var& x) { return unary(UnaryKind::relu, x); }
inline Var tanh(const Var& x) { return unary(UnaryKind::tanh, x); }
inline Var softplus(const Var& x) { return unary(UnaryKind::softplus, x); }
inline Var square(const Var& x) { return unary(UnaryKind::square, x); }
inline Var neg(const Var& x) { return unary(UnaryKind::neg, x); }
inline Var sin(const Var& x) { return unary(UnaryKind::sin, x); }
inline Var cos(const Var& x) { return unary(UnaryKind::cos, x); }
inline Var exp(const Var& x) { return unary(UnaryKind::exp, x); }

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& x);
Var operator+(const Var& a, double b);
Var operator+(double a, const Var& b);
Var operator-(const Var& a, double b);
Var operator-(double a, const Var& b);
Var operator*(const Var& a, double b);
Var operator*(double a, const Var& b);
Var operator/(const Var& a, double b);

/// Identity gradient inside [lo, hi], zero outside.
Var clamp(const Var& x, double lo, double hi);
/// Maps angles to (-pi, pi]; unit gradient.
Var wrap_angle(const Var& x);

// ---- structural ------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var sum(const Var& x);
Var mean(const Var& x);
/// Sums out one axis (the axis is removed).
Var sum_axis(const Var& x, std::size_t axis);
Var reshape(const Var& x, Shape shape);
/// Picks one index along `axis` (the axis is removed).
Var select(const Var& x, std::size_t axis, std::size_t index);
/// Stacks equally shaped values along a new axis.
Var stack(std::span<const Var> xs, std::size_t axis);

// ---- verification ----------------------------------------------------------

using TapeFunction = std::function<Var(Tape&, const Var&)>;

/// max_k |autodiff_k - central_k| / max(1, |central_k|), with central
/// differences of step `eps` around `x`. `fn` must return a scalar.
double grad_check(const TapeFunction& fn, const Tensor& x, double eps = 1e-5);

}  // namespace rectattn
