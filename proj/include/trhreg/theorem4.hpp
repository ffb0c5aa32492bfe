#pragma once

// Layer-wise CE Hessian traces of a ReLU network.
//
// Levels are 1-based: I^(1) = x, I^(i+1) = ReLU(W^(i)ᵀ I^(i) + b^(i)) for
// hidden levels and I^(L+1) = logits. W^(i) is 0-based layer i−1 of
// MlpNetwork. J^(i) = ∂g/∂I^(i) is K × D_i.
//
// The exact trace over W^(i−1) is ‖I^(i−1)‖² Σ_{d∈P^(i)} J_dᵀ Φ J_d. The
// diagonal-only form ‖I^(i−1)‖² Σ_{k,d∈P^(i)} H^(i)_kd keeps just the
// Σ_k h_k J_kd² part of J_dᵀΦJ_d; it coincides with the exact trace at the
// logit level, where J is the identity.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trhreg/autodiff.hpp"
#include "trhreg/network.hpp"

namespace trh {

class NonSmoothInput : public std::invalid_argument {
 public:
  explicit NonSmoothInput(const std::string& what) : std::invalid_argument(what) {}
};

struct LayerHTensor {
  std::size_t level = 0;               // i
  Matrix values;                       // K × D_i, (J^(i)_kd)² h_k
  std::vector<std::size_t> positive_set;  // P^(i)
};

/// ∂g/∂I^(i) at x, for 1 ≤ i ≤ L+1.
Matrix input_jacobian(const MlpNetwork& net, std::span<const double> x, std::size_t level);

/// P^(i) = {d : I^(i)_d > 0}; every index at the logit level.
std::vector<std::size_t> positive_set(const MlpNetwork& net, std::span<const double> x, std::size_t level);

/// Throws NonSmoothInput when some hidden pre-activation is within
/// kSmoothMargin of zero.
LayerHTensor layer_h_tensor(const MlpNetwork& net, std::span<const double> x, std::size_t level);

/// Exact CE trace over W^(level−1), 2 ≤ level ≤ L+1.
double trh_ce_layer(const MlpNetwork& net, std::span<const double> x, std::size_t level);
/// ‖I^(level−1)‖² Σ_{k,d∈P} H_kd.
double trh_ce_layer_diagonal(const MlpNetwork& net, std::span<const double> x, std::size_t level);
/// Σ of trh_ce_layer over every weight matrix.
double trh_ce_full(const MlpNetwork& net, std::span<const double> x);

/// max_r Σ_c |W_rc|
double l1_operator_norm(const Matrix& w);

struct LayerInequality {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// max H^(level) ≤ max H^(level+1) · ‖W^(level)‖₁², 1 ≤ level ≤ L.
LayerInequality check_layer_inequality(const MlpNetwork& net, std::span<const double> x, std::size_t level,
                                       double slack = 1e-9);

namespace tape {

/// Per-example exact CE traces over every weight matrix (B×1), evaluated at
/// the rows of `fwd` and differentiable in the weights.
ad::Var trh_ce_full(const TapeNetwork& net, const TapeForward& fwd);
/// Same for a single 0-based weight layer.
ad::Var trh_ce_layer(const TapeNetwork& net, const TapeForward& fwd, std::size_t layer);

}  // namespace tape

}  // namespace trh
