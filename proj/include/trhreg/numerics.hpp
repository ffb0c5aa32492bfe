#pragma once

// Dense row-major matrices, a counter-based RNG and central-difference
// derivative oracles. Everything else in the library is built on this.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trh {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const Vector& storage() const { return data_; }

  bool all_finite() const;
  bool same_shape(const Matrix& other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double c);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double c);

Matrix transpose(const Matrix& a);
/// a · b
Matrix matmul(const Matrix& a, const Matrix& b);
/// a · bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// aᵀ · b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm2(std::span<const double> a);
double norm_inf(std::span<const double> a);
double sum(std::span<const double> a);

/// ‖a − b‖₂ / max(‖b‖₂, floor). `b` is the reference.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);
double relative_error(double a, double b, double floor = 1e-12);

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// The 64-bit seed is the key; the 128-bit counter is split into a 64-bit
/// stream id (high half) and a 64-bit position (low half). Distinct streams
/// therefore never overlap, and every stream has 2⁶⁴ blocks of 128 bits.
/// All arithmetic is on fixed-width integers, so the integer stream is the
/// same on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  /// Independent generator for sub-task `index` (trial, example, restart…).
  /// Derivation is a pure function of (seed, stream, index).
  Rng derive(std::uint64_t index) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via Box–Muller (cached pair).
  double normal();
  /// ±1 with equal probability.
  double rademacher();

  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 4> counter,
                                                   std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

Vector rademacher_vector(std::size_t n, Rng& rng);
Vector normal_vector(std::size_t n, Rng& rng);

/// Raised when a finite-difference oracle sees a non-finite evaluation.
class OracleFailure : public std::runtime_error {
 public:
  OracleFailure(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

using ScalarFunction = std::function<double(std::span<const double>)>;
using GradientFunction = std::function<Vector(std::span<const double>)>;

inline constexpr double kGradientStep = 1e-5;
inline constexpr double kHessianStep = 1e-4;

/// Central-difference gradient: (f(w + h eᵢ) − f(w − h eᵢ)) / 2h.
Vector finite_diff_gradient(const ScalarFunction& f, std::span<const double> w,
                            double h = kGradientStep);

/// Diagonal of the Hessian from central differences of an analytic gradient,
/// restricted to `indices` (all coordinates when empty). Entry j of the
/// result belongs to indices[j].
Vector finite_diff_hessian_diag(const GradientFunction& grad, std::span<const double> w,
                                double h = kHessianStep,
                                std::span<const std::size_t> indices = {});

}  // namespace trh
