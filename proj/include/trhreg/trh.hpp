#pragma once

// Closed-form top-layer Hessian traces of the robust losses, and the
// regularized training objective.
//
// With g = θ_tᵀz, every second derivative over a top-layer entry w_jk is a
// quadratic form in (z_j, z′_j), so the trace reduces to sums over classes:
//   Tr = ‖z‖² Σ_k F_{g_k g_k} + 2(z·z′) Σ_k F_{g_k g′_k} + ‖z′‖² Σ_k F_{g′_k g′_k}.
// Two softmax identities do most of the work:
//   ∂Φ_ik/∂g_k = s_k(1 − 2s_k)Ψ_ki  and  Σ_i Φ_ik² = s_k²(1 − 2s_k + ‖s‖²).

#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "trhreg/attacks.hpp"
#include "trhreg/autodiff.hpp"
#include "trhreg/losses.hpp"
#include "trhreg/network.hpp"

namespace trh {

enum class LambdaSchedule { Constant, Linear, Multistep };
/// Top: analytic top-layer trace. Full: sum of exact per-layer CE traces
/// at x′ (AT only).
enum class TrHScope { Top, Full };

LambdaSchedule parse_lambda_schedule(const std::string& s);
std::string to_string(LambdaSchedule s);
TrHScope parse_trh_scope(const std::string& s);

struct TrHConfig {
  double lambda = 0.0;
  LambdaSchedule schedule = LambdaSchedule::Constant;
  /// Freeze the clean softmax inside the KL term of TRADES (the default).
  bool stop_grad_clean = true;
  TrHScope scope = TrHScope::Top;

  void validate() const;
};

/// ‖z′‖²·1ᵀh′
double trh_at(const ForwardTrace& adv);

/// ‖z‖²·1ᵀh + λ_t‖z′‖²·1ᵀh′, clean softmax frozen inside KL.
double trh_trades(const ForwardTrace& clean, const ForwardTrace& adv, double lambda_t);

struct TradesFullTerms {
  Vector psi;          // ψ_k = Ψ_k · log s(g)
  Vector psi_prime;    // ψ′_k = Ψ_k · log s(g′)
  Vector omega;        // ω_k = Σ_i Φ_ik Ψ_ik
  Vector omega_prime;  // ω′_k = Σ_i Φ_ik Ψ′_ik
  double g_term = 0.0;
};

/// Trace of CE(x) + λ_t·KL(s(g) ‖ s(g′)) with gradients through both sides:
/// trh_trades + λ_t·G, where
///   G = ‖z‖² Σ_k [s_k(1−2s_k)(ψ_k − ψ′_k) + ω_k] − (z·z′) Σ_k (h_k + ω′_k).
std::pair<double, TradesFullTerms> trh_trades_full(const ForwardTrace& clean, const ForwardTrace& adv,
                                                   double lambda_t);

/// ‖z′‖²·1ᵀh′ + λ_A·Tr∇²‖c − s(g′)‖² with c = s(g) frozen:
///   2‖z′‖² Σ_k [Σ_i Φ′_ik² − s′_k(1−2s′_k) Σ_i (c_i − s′_i) Ψ′_ki].
double trh_alp(const ForwardTrace& clean, const ForwardTrace& adv, double lambda_a);

/// ‖z‖²·1ᵀh + ‖z′‖² Σ_k [s′_k(1−2s′_k)Ψ′_kκ(1−p) + Φ′_κk²]/(1−p)²
///   + λ_m (1 − s_y)‖z′‖²·1ᵀh′, with κ = κ*, p = s′_κ and the clean
/// softmax (including the 1 − s_y weight) frozen inside WKL.
double trh_mart(const ForwardTrace& clean, const ForwardTrace& adv, std::size_t y, double lambda_m);

/// Dispatch on the loss kind. `full_gradient` selects the unfrozen TRADES
/// trace; the other kinds only have a frozen-clean form.
double trh_top(const RobustLossKind& kind, const ForwardTrace& clean, const ForwardTrace& adv,
               std::size_t y, bool full_gradient = false);

namespace tape {

/// Per-example (B×1) top-layer trace, differentiable in every parameter.
/// `clean` may be null for AT.
ad::Var trh_top(const RobustLossKind& kind, const TapeForward* clean, const TapeForward& adv,
                std::span<const std::size_t> labels, bool full_gradient);

}  // namespace tape

struct ObjectiveSpec {
  RobustLossKind kind = RobustLossKind::at();
  TrHConfig trh;
  /// λ in effect at this iteration (after scheduling).
  double lambda = 0.0;
  /// ℓ2 weight penalty γ over every parameter.
  double gamma = 0.0;
};

/// mean_b [robust_b + λ·TrH_b] + γ‖θ‖², with x′ given. The λ and γ terms
/// are skipped entirely when zero.
ad::Var algorithm1_loss(ad::Tape& tape, const TapeNetwork& net, const Matrix& x, const Matrix& x_adv,
                        std::span<const std::size_t> labels, const ObjectiveSpec& spec);

/// Inner attack used by a loss kind: KL for TRADES, CE otherwise.
AttackConfig inner_attack_for(const RobustLossKind& kind, AttackConfig cfg);

struct ObjectiveResult {
  double value = 0.0;
  Vector gradient;
  Matrix x_adv;
};

/// Runs PGD (the examples become constants) and differentiates the loss.
ObjectiveResult algorithm1_objective(const MlpNetwork& net, const Matrix& x, std::span<const std::size_t> labels,
                                     const ObjectiveSpec& spec, const AttackConfig& attack, const Rng& rng);

}  // namespace trh
