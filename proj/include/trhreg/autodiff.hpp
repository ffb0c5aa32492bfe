#pragma once

// Minimal reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation in creation order; backward() walks it in
// reverse. Rows are batch examples throughout the library, so the
// broadcasting helpers (add_row, mul_col, add_col) are row/column oriented.

#include <cstddef>
#include <functional>
#include <vector>

#include "trhreg/numerics.hpp"

namespace trh::ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Value of a 1×1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Var variable(Matrix value);
  /// Leaf treated as a constant (stop-gradient).
  Var constant(Matrix value);
  Var scalar(double v) { return constant(Matrix(1, 1, v)); }

  const Matrix& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient accumulated into `v` by the last backward(); zeros if none.
  Matrix gradient(Var v) const;

  /// Seeds d(root)/d(root) = 1 and propagates. `root` must be 1×1.
  void backward(Var root);

  /// Records an op result. `backward` runs only when some parent needs grad.
  Var record(Matrix value, bool requires_grad, BackwardFn backward);
  void accumulate(Var target, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
/// Elementwise quotient.
Var div(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// a + 1·row, row is 1×n.
Var add_row(Var a, Var row);
/// a ⊙ (col·1ᵀ), col is B×1.
Var mul_col(Var a, Var col);
/// a + col·1ᵀ, col is B×1.
Var add_col(Var a, Var col);
Var relu(Var a);
/// a ⊙ mask, mask constant.
Var apply_mask(Var a, const Matrix& mask);
Var square(Var a);
Var log(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// B×n → B×1.
Var row_sum(Var a);
/// → 1×1.
Var sum(Var a);
/// → 1×1.
Var mean(Var a);
/// B×n → B×1, column j.
Var column(Var a, std::size_t j);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator+(Var a, double c) { return add_scalar(a, c); }
inline Var operator+(double c, Var a) { return add_scalar(a, c); }
inline Var operator-(Var a) { return scale(a, -1.0); }
/// c − a
inline Var operator-(double c, Var a) { return add_scalar(scale(a, -1.0), c); }

}  // namespace trh::ad
