#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mdrlab/tensor.hpp"

namespace mdrlab {

// A trainable tensor together with its accumulated gradient.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
};

// Records one forward pass as an ordered list of primitive nodes. Nodes are
// appended after their inputs, so index order is a topological order and the
// backward sweep is a single reverse scan.
class Tape {
 public:
  // Local gradient rule: reads the node's output gradient and accumulates
  // into the gradients of its inputs.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a parameter; backward accumulates into parameter.grad.
  Var leaf(Parameter& parameter);

  // Appends a computed node. Throws NumericError if `value` is not finite.
  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  // Reverse sweep from a one-element root. Parameter gradients are
  // accumulated (+=), so callers zero them between steps. A tape can be
  // consumed only once.
  void backward(Var root);

  const Tensor& value(std::size_t index) const;
  // Gradient of the root with respect to a node; zero-filled if the node does
  // not influence the root. Valid after backward().
  const Tensor& grad(std::size_t index) const { return nodes_.at(index).grad; }
  Tensor& grad_mut(std::size_t index);
  bool requires_grad(std::size_t index) const { return nodes_[index].requires_grad; }
  const std::string& op_name(std::size_t index) const { return nodes_.at(index).op; }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    const Tensor* external = nullptr;  // parameter leaves alias their value
    Parameter* parameter = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Tensor grad;
    bool has_grad = false;
  };

  // deque: references to earlier nodes stay valid while new ones are pushed.
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

// --- primitives ------------------------------------------------------------

Var matmul(Var a, Var b);     // [m,k] x [k,n] -> [m,n]
Var matmul_bt(Var a, Var b);  // [m,k] x [n,k]^T -> [m,n]

// Elementwise; shapes must match exactly (use broadcast_to first).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);

Var neg(Var x);
Var scale(Var x, double factor);
Var add_scalar(Var x, double offset);
Var relu(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);  // NumericError on non-positive input
Var square(Var x);
Var sqrt(Var x);  // NumericError on non-positive input
Var clamp(Var x, double lo, double hi);

Var sum(Var x);                     // -> scalar
Var sum(Var x, std::size_t axis);   // axis removed from shape
Var mean(Var x);
Var mean(Var x, std::size_t axis);
Var variance(Var x);                // biased (divide by n)
Var variance(Var x, std::size_t axis);

// Numpy-style: trailing dimensions aligned, size-1 or missing dims expanded.
Var broadcast_to(Var x, const Shape& shape);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var concat(std::span<const Var> parts, std::size_t axis);
// Row-wise log-softmax over the last axis of a rank-2 tensor.
Var log_softmax(Var logits);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var x) { return neg(x); }

}  // namespace mdrlab
