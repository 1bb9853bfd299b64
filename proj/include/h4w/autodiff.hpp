#pragma once

// Reverse-mode differentiation on a linear tape.
//
// Every operation appends a node holding its forward value and a backward
// closure. Nodes are appended in execution order, so the tape is already
// topologically sorted and backward() is a single reverse sweep. A tape is
// consumed by exactly one backward() call.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "h4w/tensor.hpp"

namespace h4w::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double item() const;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends an op result. The backward closure is dropped when no input
  // requires a gradient.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(int id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }

  // Gradient accumulated for a node; zeros if the node received none.
  std::vector<double> grad(Var v) const;

  // Mutable gradient buffer (allocated as zeros on first use). For op authors.
  std::vector<double>& grad_buffer(int id);
  // Gradient flowing into `id` during backward; empty span when none reached it.
  std::span<const double> incoming(int id) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  bool consumed_ = false;
};

Var check_same_tape(std::initializer_list<Var> vars);

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a * s for a constant s.
Var scale(Var a, double s);
// a + c for a constant tensor c of the same shape.
Var add_const(Var a, const Tensor& c);
// a * c elementwise for a constant tensor c of the same shape.
Var mul_const(Var a, const Tensor& c);

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
// Fully-connected layer: x [in] (any shape, flattened), w [out,in], b [out] -> [out]
Var linear(Var x, Var w, Var b);

Var concat(std::span<const Var> parts, int axis);
Var concat(std::initializer_list<Var> parts, int axis);
Var slice(Var a, int axis, int start, int length);
Var gather_rows(Var a, std::span<const int> rows);
Var reshape(Var a, Shape shape);
Var flatten(Var a);

Var relu(Var a);
Var exp(Var a);
// Softmax over the last axis.
Var softmax(Var a);

// x [C,H,W], w [O,C,k,k], b [O]; k in {1,3}; "same" padding (k/2), given stride.
// Output spatial size is ceil(H/stride) x ceil(W/stride).
Var conv2d(Var x, Var w, Var b, int stride = 1);
// [C,H,W] -> [C]
Var mean_pool_spatial(Var x);

Var sum(Var a);
Var mean(Var a);
// mean |a - b| over all elements -> scalar
Var l1_loss(Var a, Var b);

// Treats `a` as a constant from here on.
Var detach(Var a);

}  // namespace h4w::ad
