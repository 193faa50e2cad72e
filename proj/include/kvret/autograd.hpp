#pragma once

// Define-by-run reverse-mode differentiation over fp64 tensors.
//
// A Tape records every operation applied to its variables. Nodes only ever
// reference earlier nodes, so a single reverse sweep in recording order is a
// valid topological traversal. Tapes are single-owner; parameters bound with
// Tape::parameter are referenced, not copied, and must outlive the tape.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "kvret/tensor.hpp"

namespace kvret::ag {

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives no gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient; `value` is referenced, not copied.
  Var parameter(const Tensor& value);

  const Tensor& value(std::size_t id) const;
  std::string_view op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar node. Gradients of earlier sweeps are reset.
  void backward(Var loss);

  /// Gradient of the last backward() target with respect to `v`; zeros when
  /// `v` is unreachable from it.
  Tensor gradient(Var v) const;

  // Op authoring interface.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  /// Gradient accumulator of node `id`, zero-initialized on first access.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// Primitive operations. Every op validates its operand shapes and throws
// DimensionError naming the op on mismatch.

/// Matrix product. Rank-1 operands act as a row vector on the left and as a
/// column vector on the right; the result drops any such unit dimension.
Var matmul(Var a, Var b);
/// x · Wᵀ for a weight W of shape [out x in]; x is [in] or [rows x in].
Var linear(Var x, Var weight);
/// Elementwise sum; a rank-1 `b` is broadcast over the rows of a matrix `a`.
Var add(Var a, Var b);
/// Concatenation along the last axis; a rank-1 `b` is broadcast over the rows
/// of a matrix `a`.
Var concat(Var a, Var b);
Var tanh(Var x);
Var sigmoid(Var x);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Sum of all entries, as a length-1 tensor.
Var sum(Var x);
/// Sum of squared entries, as a length-1 tensor.
Var sum_squares(Var x);
/// Stable softmax over a rank-1 tensor.
Var softmax(Var x);
/// Contiguous range [offset, offset + length) of a rank-1 tensor.
Var slice(Var x, std::size_t offset, std::size_t length);
/// Row `r` of a matrix as a rank-1 tensor.
Var row(Var x, std::size_t r);
/// Stack equally sized rank-1 tensors as matrix rows.
Var stack(std::span<const Var> rows);
/// Rows of `table` selected by `ids`: [ids.size() x cols].
Var embedding(Var table, std::span<const std::size_t> ids);
/// One row per bag, each the sum of the selected table rows.
Var embedding_bag(Var table, std::span<const std::vector<std::size_t>> bags);
/// x * mask with a fixed, caller-sampled mask.
Var dropout(Var x, const Tensor& mask);
/// dense + Σ_k values[k]·e_{indices[k]}; repeated indices accumulate.
Var scatter_add(Var dense, Var values, std::span<const std::size_t> indices);
/// -log softmax(logits)[target], fused and max-shifted.
Var cross_entropy(Var logits, std::size_t target);

/// Softmax of plain values, used outside of any tape.
std::vector<double> softmax(std::span<const double> logits);

}  // namespace kvret::ag
