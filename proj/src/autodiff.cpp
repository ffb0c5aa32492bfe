#include "trhreg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trh::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non-1x1 node");
  return v(0, 0);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, false,
                        requires_grad ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var target, const Matrix& g) {
  Node& node = nodes_[target.id()];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

Matrix Tape::gradient(Var v) const {
  const Node& node = nodes_[v.id()];
  if (node.has_grad) return node.grad;
  return Matrix(node.value.rows(), node.value.cols());
}

void Tape::backward(Var root) {
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) throw std::logic_error("Tape::backward: root must be 1x1");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  accumulate(root, Matrix(1, 1, 1.0));
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    const Matrix upstream = n.grad;
    n.backward(*this, upstream);
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

bool any_grad(Var a) { return a.tape().requires_grad(a); }
bool any_grad(Var a, Var b) { return any_grad(a) || any_grad(b); }

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out = a;
  for (double& v : out.data()) v = f(v);
  return out;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(trh::matmul(a.value(), b.value()), any_grad(a, b),
                  [a, b](Tape& tape, const Matrix& g) {
                    if (tape.requires_grad(a)) tape.accumulate(a, trh::matmul_nt(g, b.value()));
                    if (tape.requires_grad(b)) tape.accumulate(b, trh::matmul_tn(a.value(), g));
                  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(trh::matmul_nt(a.value(), b.value()), any_grad(a, b),
                  [a, b](Tape& tape, const Matrix& g) {
                    // out = a bᵀ ⇒ da = g b, db = gᵀ a
                    if (tape.requires_grad(a)) tape.accumulate(a, trh::matmul(g, b.value()));
                    if (tape.requires_grad(b)) tape.accumulate(b, trh::matmul_tn(g, a.value()));
                  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  return a.tape().record(a.value() + b.value(), any_grad(a, b),
                         [a, b](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, g);
                           tape.accumulate(b, g);
                         });
}

Var sub(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "sub");
  return a.tape().record(a.value() - b.value(), any_grad(a, b),
                         [a, b](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, g);
                           if (tape.requires_grad(b)) tape.accumulate(b, g * -1.0);
                         });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  return a.tape().record(hadamard(a.value(), b.value()), any_grad(a, b),
                         [a, b](Tape& tape, const Matrix& g) {
                           if (tape.requires_grad(a)) tape.accumulate(a, hadamard(g, b.value()));
                           if (tape.requires_grad(b)) tape.accumulate(b, hadamard(g, a.value()));
                         });
}

Var div(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "div");
  Matrix out = a.value();
  auto o = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] /= bd[i];
  return a.tape().record(std::move(out), any_grad(a, b), [a, b](Tape& tape, const Matrix& g) {
    const auto av = a.value().data();
    const auto bv = b.value().data();
    if (tape.requires_grad(a)) {
      Matrix ga = g;
      auto d = ga.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] /= bv[i];
      tape.accumulate(a, ga);
    }
    if (tape.requires_grad(b)) {
      Matrix gb = g;
      auto d = gb.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= -av[i] / (bv[i] * bv[i]);
      tape.accumulate(b, gb);
    }
  });
}

Var scale(Var a, double c) {
  return a.tape().record(a.value() * c, any_grad(a),
                         [a, c](Tape& tape, const Matrix& g) { tape.accumulate(a, g * c); });
}

Var add_scalar(Var a, double c) {
  return a.tape().record(map(a.value(), [c](double v) { return v + c; }), any_grad(a),
                         [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) o[c] += rv(0, c);
  }
  return a.tape().record(std::move(out), any_grad(a, row),
                         [a, row](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, g);
                           if (tape.requires_grad(row)) {
                             Matrix gr(1, g.cols());
                             for (std::size_t r = 0; r < g.rows(); ++r)
                               for (std::size_t c = 0; c < g.cols(); ++c) gr(0, c) += g(r, c);
                             tape.accumulate(row, gr);
                           }
                         });
}

Var mul_col(Var a, Var col) {
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw std::invalid_argument("mul_col: shape mismatch");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v *= cv(r, 0);
  return a.tape().record(std::move(out), any_grad(a, col),
                         [a, col](Tape& tape, const Matrix& g) {
                           const Matrix& av = a.value();
                           const Matrix& cv = col.value();
                           if (tape.requires_grad(a)) {
                             Matrix ga = g;
                             for (std::size_t r = 0; r < ga.rows(); ++r)
                               for (double& v : ga.row(r)) v *= cv(r, 0);
                             tape.accumulate(a, ga);
                           }
                           if (tape.requires_grad(col)) {
                             Matrix gc(cv.rows(), 1);
                             for (std::size_t r = 0; r < g.rows(); ++r)
                               gc(r, 0) = dot(g.row(r), av.row(r));
                             tape.accumulate(col, gc);
                           }
                         });
}

Var add_col(Var a, Var col) {
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw std::invalid_argument("add_col: shape mismatch");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (double& v : out.row(r)) v += cv(r, 0);
  return a.tape().record(std::move(out), any_grad(a, col),
                         [a, col](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, g);
                           if (tape.requires_grad(col)) {
                             Matrix gc(g.rows(), 1);
                             for (std::size_t r = 0; r < g.rows(); ++r) gc(r, 0) = trh::sum(g.row(r));
                             tape.accumulate(col, gc);
                           }
                         });
}

Var apply_mask(Var a, const Matrix& mask) {
  require_same_shape(a.value(), mask, "apply_mask");
  return a.tape().record(hadamard(a.value(), mask), any_grad(a),
                         [a, mask](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, hadamard(g, mask));
                         });
}

Var relu(Var a) {
  // Derivative at exactly 0 is taken as 0.
  Matrix mask = map(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  return apply_mask(a, mask);
}

Var square(Var a) {
  return a.tape().record(map(a.value(), [](double v) { return v * v; }), any_grad(a),
                         [a](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, hadamard(g, a.value() * 2.0));
                         });
}

Var log(Var a) {
  return a.tape().record(map(a.value(), [](double v) { return std::log(v); }), any_grad(a),
                         [a](Tape& tape, const Matrix& g) {
                           Matrix ga = g;
                           auto d = ga.data();
                           auto av = a.value().data();
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] /= av[i];
                           tape.accumulate(a, ga);
                         });
}

namespace {

Matrix softmax_rows_value(const Matrix& a) {
  Matrix out = a;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : row) v /= z;
  }
  return out;
}

}  // namespace

Var softmax_rows(Var a) {
  return a.tape().record(softmax_rows_value(a.value()), any_grad(a), [a](Tape& tape, const Matrix& g) {
    const Matrix s = softmax_rows_value(a.value());
    Matrix ga(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gs = dot(g.row(r), s.row(r));
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = s(r, c) * (g(r, c) - gs);
    }
    tape.accumulate(a, ga);
  });
}

Var log_softmax_rows(Var a) {
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : row) v -= lse;
  }
  return a.tape().record(std::move(out), any_grad(a), [a](Tape& tape, const Matrix& g) {
    const Matrix s = softmax_rows_value(a.value());
    Matrix ga(g.rows(), g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const double gsum = trh::sum(g.row(r));
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(r, c) - s(r, c) * gsum;
    }
    tape.accumulate(a, ga);
  });
}

Var row_sum(Var a) {
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out(r, 0) = trh::sum(av.row(r));
  return a.tape().record(std::move(out), any_grad(a), [a](Tape& tape, const Matrix& g) {
    Matrix ga(a.value().rows(), a.value().cols());
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (double& v : ga.row(r)) v = g(r, 0);
    tape.accumulate(a, ga);
  });
}

Var sum(Var a) {
  return a.tape().record(Matrix(1, 1, trh::sum(a.value().data())), any_grad(a),
                         [a](Tape& tape, const Matrix& g) {
                           tape.accumulate(a, Matrix(a.value().rows(), a.value().cols(), g(0, 0)));
                         });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty node");
  return scale(sum(a), 1.0 / n);
}

Var column(Var a, std::size_t j) {
  const Matrix& av = a.value();
  if (j >= av.cols()) throw std::out_of_range("column: index out of range");
  Matrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) out(r, 0) = av(r, j);
  return a.tape().record(std::move(out), any_grad(a), [a, j](Tape& tape, const Matrix& g) {
    Matrix ga(a.value().rows(), a.value().cols());
    for (std::size_t r = 0; r < ga.rows(); ++r) ga(r, j) = g(r, 0);
    tape.accumulate(a, ga);
  });
}

}  // namespace trh::ad
