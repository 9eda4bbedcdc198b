#pragma once

// Tape-based reverse-mode differentiation over Tensor.
//
// A Tape records every primitive applied to its Vars in creation order, which
// is already a topological order; backward() walks it once in reverse.
// Trainable parameters enter through Tape::param() and receive their gradient
// in Parameter::grad. Frozen parameters enter as constants and are never
// written.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lightner/parameter.hpp"
#include "lightner/tensor.hpp"

namespace lightner {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
};

enum class Axis { kRows, kCols };

class Tape {
 public:
  enum class Mode { kTrain, kInference };

  explicit Tape(Mode mode = Mode::kTrain) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf whose gradient is readable through grad() after backward.
  Var input(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient of the last backward() loss w.r.t. v; zeros if v was unreachable.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Populates gradients for every differentiable node reachable from loss.
  // Throws BACKWARD_TWICE if called again before reset().
  void backward(Var loss);
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  Mode mode() const noexcept { return mode_; }

  using BackwardFn =
      std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;

  // Appends a primitive result. `fn` is dropped when no parent needs a gradient.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn);
  // Gradient slot of node id, allocated (zero) on first use. Only valid inside backward.
  Tensor& grad_slot(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// Forward primitives. Each checks shapes, naming both operands on mismatch
// (SHAPE_MISMATCH), and appends one tape record.
namespace ad {

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T
Var transpose(Var a);
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gather_rows(Var table, std::span<const std::size_t> indices);
Var concat(std::span<const Var> parts, Axis axis);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gelu(Var a);
Var tanh(Var a);
// Additive mask: entries where mask is -inf are excluded from a later softmax.
Var masked_fill(Var a, const Tensor& additive_mask);
Var sum(Var a);
// -sum_r log_probs(r, targets[r]); TARGET_OUT_OF_RANGE on a bad column.
Var nll_rows(Var log_probs, std::span<const std::size_t> targets);

}  // namespace ad
}  // namespace lightner
