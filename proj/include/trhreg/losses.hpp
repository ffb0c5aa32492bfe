#pragma once

// Softmax Jacobian algebra and the clean / robust losses.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trhreg/autodiff.hpp"
#include "trhreg/network.hpp"
#include "trhreg/numerics.hpp"

namespace trh {

/// s = softmax(g), Φ = ∂s/∂g = diag(s) − s sᵀ, Ψ = ∂log s/∂g = I − 1 sᵀ,
/// h = s − s² = diag(Φ).
struct SoftmaxDerivs {
  Vector s;
  Matrix phi;
  Matrix psi;
  Vector h;
};

SoftmaxDerivs softmax_derivs(std::span<const double> logits);
Vector softmax(std::span<const double> logits);
Vector log_softmax(std::span<const double> logits);

double cross_entropy(std::span<const double> logits, std::size_t y);
/// KL(p ‖ q) for probability vectors; terms with p_i = 0 contribute 0.
double kl_div(std::span<const double> p, std::span<const double> q);
/// KL(softmax(g_p) ‖ softmax(g_q)) computed from logits in log space.
double kl_div_logits(std::span<const double> g_p, std::span<const double> g_q);
/// ‖p − q‖²
double alp_pair_loss(std::span<const double> p, std::span<const double> q);

/// argmax_{κ≠y} p_κ, lowest index on ties.
std::size_t kappa_star(std::span<const double> p, std::size_t y);

struct MartLosses {
  double bce = 0.0;
  double wkl = 0.0;
  std::size_t kappa_star = 0;
};

/// bce = CE(clean, y) − log(1 − max_{κ≠y} s(adv)_κ);
/// wkl = KL(s(clean) ‖ s(adv))·(1 − s(clean)_y).
MartLosses mart_losses(const ForwardTrace& clean, const ForwardTrace& adv, std::size_t y);

struct RobustLossKind {
  enum class Variant { AT, TRADES, ALP, MART };
  Variant variant = Variant::AT;
  /// λ_t, λ_A or λ_m; unused for AT.
  double penalty = 0.0;

  static RobustLossKind at() { return {Variant::AT, 0.0}; }
  static RobustLossKind trades(double lambda_t) { return make(Variant::TRADES, lambda_t); }
  static RobustLossKind alp(double lambda_a) { return make(Variant::ALP, lambda_a); }
  static RobustLossKind mart(double lambda_m) { return make(Variant::MART, lambda_m); }

  /// True when the loss needs the clean forward pass.
  bool uses_clean() const { return variant != Variant::AT; }
  std::string name() const;

 private:
  static RobustLossKind make(Variant v, double p);
};

RobustLossKind parse_loss_kind(const std::string& name, double penalty);

/// Per-example robust loss value at (x, x′).
double robust_loss(const RobustLossKind& kind, const ForwardTrace& clean, const ForwardTrace& adv,
                   std::size_t y);

Matrix one_hot(std::span<const std::size_t> labels, std::size_t k);

namespace tape {

// Batch versions; rows are examples and each returns a B×1 column.

ad::Var cross_entropy(ad::Var logits, const Matrix& onehot);
ad::Var kl_div(ad::Var logits_p, ad::Var logits_q);
ad::Var alp_pair(ad::Var logits_clean, ad::Var logits_adv);
/// B×K one-hot of κ* per row, from the current adversarial softmax.
Matrix kappa_star_mask(const Matrix& adv_logits, std::span<const std::size_t> labels);
/// −log(1 − Σ_κ mask·s(adv)), with 1 − p formed as the sum of the others.
ad::Var mart_margin(ad::Var logits_adv, const Matrix& kappa_mask);

/// Per-example robust loss (full gradient everywhere).
ad::Var robust_loss(const RobustLossKind& kind, ad::Var logits_clean, ad::Var logits_adv,
                    std::span<const std::size_t> labels);

}  // namespace tape

}  // namespace trh
