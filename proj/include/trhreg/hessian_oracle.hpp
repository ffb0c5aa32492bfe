#pragma once

// Ground-truth Hessian traces: finite-difference diagonals, Hutchinson
// estimates of Tr(H) and Tr(H²), and eigenvalue summary statistics.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "trhreg/network.hpp"
#include "trhreg/numerics.hpp"

namespace trh {

/// Parameter subsets of a network (indices into flatten_weights).
struct ParameterSelection {
  enum class Kind { All, Weights, Top, Layer };
  Kind kind = Kind::Weights;
  std::size_t layer = 0;  // Layer only, 0-based

  static ParameterSelection all() { return {Kind::All, 0}; }
  static ParameterSelection weights() { return {Kind::Weights, 0}; }
  static ParameterSelection top() { return {Kind::Top, 0}; }
  static ParameterSelection of_layer(std::size_t l) { return {Kind::Layer, l}; }
};

std::vector<std::size_t> select_parameters(const MlpNetwork& net, ParameterSelection sel);

/// Σ of the finite-difference Hessian diagonal over `indices`.
double exact_trace(const GradientFunction& grad, std::span<const double> w, std::span<const std::size_t> indices,
                   double h = kHessianStep);

struct TraceEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  std::size_t probes = 0;
};

using QuadraticForm = std::function<double(std::span<const double> v)>;
using HessianVectorProduct = std::function<Vector(std::span<const double> v)>;

inline constexpr double kQuadraticFormStep = 1e-3;

/// v ↦ (f(w + hv) − 2f(w) + f(w − hv)) / h²
QuadraticForm quadratic_form_from_loss(ScalarFunction f, Vector w, double h = kQuadraticFormStep);
/// v ↦ (∇f(w + hv) − ∇f(w − hv)) / 2h
HessianVectorProduct hvp_from_gradient(GradientFunction grad, Vector w, double h = kHessianStep);
/// v ↦ vᵀ(Hv)
QuadraticForm quadratic_form_from_hvp(HessianVectorProduct hvp);

/// Mean of vᵀHv over Rademacher probes; standard error = sample std/√probes.
TraceEstimate hutchinson_trace(const QuadraticForm& q, std::size_t dim, std::size_t probes, Rng& rng);
/// Mean of ‖Hv‖² over Rademacher probes, unbiased for Tr(H²).
TraceEstimate hutchinson_trace_sq(const HessianVectorProduct& hvp, std::size_t dim, std::size_t probes, Rng& rng);

struct EigenStats {
  double mean = 0.0;
  double std = 0.0;
};

/// mean = trace/n, std = √max(0, trace_sq/n − mean²).
EigenStats eigen_stats(double trace, double trace_sq, std::size_t n);

struct LayerHessianReport {
  std::size_t layer = 0;  // 0 = all layers, otherwise 1-based weight layer
  double trace = 0.0;
  double trace_sq = 0.0;
  double eig_mean = 0.0;
  double eig_std = 0.0;
  std::size_t param_count = 0;
};

LayerHessianReport make_report(std::size_t layer, double trace, double trace_sq, std::size_t n);

}  // namespace trh
