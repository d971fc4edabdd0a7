#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape owns every intermediate value of one forward pass. Ops append nodes;
// Tape::backward walks them in reverse and accumulates gradients into every
// node that depends on a variable leaf. The tape is single-use per thread.

#include <functional>
#include <span>
#include <vector>

#include "tfgu/common.hpp"

namespace tfgu::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);

  /// Appends an op result. `backward` receives the node's output gradient and
  /// must call accumulate() for each parent; it is dropped when no parent
  /// needs a gradient.
  Var push(Matrix value, std::span<const Var> parents, Backward backward);

  /// Seeds d(root)/d(root) = 1 for a 1×1 root and propagates. Gradients from
  /// an earlier backward() are cleared first, so one forward pass can serve
  /// several objectives.
  void backward(Var root);

  /// True when the last backward() reached `v` from its root.
  bool reached(Var v) const { return nodes_[v.id()].reached; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  void accumulate(int id, const Matrix& contribution);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    Backward backward;
    bool requires_grad = false;
    bool reached = false;
  };
  std::vector<Node> nodes_;
};

// Linear algebra.
Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_bt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Adds a 1×c row to every row of a.
Var add_row(Var a, Var row);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// Reductions.
Var sum(Var a);
Var mean(Var a);

// Nonlinearities.
Var softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-6);
Var gelu(Var a);
Var log(Var a);
/// Elementwise clamp; gradient is zero where the value was clipped.
Var clamp(Var a, double lo, double hi);

// Indexing.
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
/// Returns a copy of `a` with `block` added at (row, col).
Var add_block(Var a, Var block, Eigen::Index row, Eigen::Index col);
/// Gathers a(i, index[i]) into an n×1 column.
Var pick(Var a, std::span<const int> index);
/// Per-row gap between the largest and second-largest entry (n×1).
Var top2_gap_rows(Var a);

}  // namespace tfgu::ad
