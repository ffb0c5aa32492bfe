#pragma once

// Gaussian posteriors, their KL to an isotropic prior, closed-form optimal
// posterior variances of the second-order bound, Monte-Carlo expected loss
// and the training surrogate.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trhreg/attacks.hpp"
#include "trhreg/hessian_oracle.hpp"
#include "trhreg/losses.hpp"
#include "trhreg/network.hpp"

namespace trh {

struct GaussianPosterior {
  Vector mean;
  /// Spherical when `diagonal` is empty.
  double sigma_q_sq = 0.0;
  Vector diagonal;

  static GaussianPosterior spherical(Vector mean, double sigma_sq);
  static GaussianPosterior diag(Vector mean, Vector sigma_sq);

  bool is_spherical() const { return diagonal.empty(); }
  double variance(std::size_t i) const { return is_spherical() ? sigma_q_sq : diagonal[i]; }
  void validate() const;
};

struct PacBayesConfig {
  double sigma0_sq = 0.01;
  double beta = 1.0;
  double tau = 1.0;
  std::size_t m = 1;
  /// Stands in for the Q-independent constant C(τ, β, m).
  double c_const = 0.0;

  /// γ = 1/(2βσ0²)
  double gamma() const { return 1.0 / (2.0 * beta * sigma0_sq); }
  /// λ = σ0²/2
  double lambda() const { return sigma0_sq / 2.0; }
  /// Inverse of the (γ, λ) reparameterization.
  static PacBayesConfig from_gamma_lambda(double gamma, double lambda);
  void validate() const;
  /// Throws unless γ and λ match this configuration within `tol`.
  void check_reparameterization(double gamma, double lambda, double tol = 1e-12) const;
};

/// Raised when the second-order expansion has no interior minimizer.
class OutOfRegime : public std::domain_error {
 public:
  OutOfRegime(const std::string& what, std::vector<std::size_t> indices)
      : std::domain_error(what), indices_(std::move(indices)) {}
  const std::vector<std::size_t>& indices() const { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

/// KL(Q ‖ N(0, σ0² I)) = ½[Σ log(σ0²/σ_n²) − N + ‖θ‖²/σ0² + Σ σ_n²/σ0²].
double gaussian_kl(const GaussianPosterior& post, double sigma0_sq);

/// σ_q² = σ0² / (1 + σ0²β·trace/N).
double optimal_sigma_spherical(double trace, double sigma0_sq, double beta, std::size_t n_params);
/// σ_n² = σ0² / (1 + σ0²β·H_nn).
Vector optimal_sigma_diag(std::span<const double> hessian_diag, double sigma0_sq, double beta);

/// ½σ_q²·trace + KL/β for a spherical posterior around θ (‖θ‖² given).
double second_order_objective_spherical(double sigma_q_sq, double trace, double theta_sq, std::size_t n,
                                        double sigma0_sq, double beta);
/// ½Σ σ_n² H_nn + KL/β for a diagonal posterior.
double second_order_objective_diag(std::span<const double> sigma_sq, std::span<const double> hessian_diag,
                                   double theta_sq, double sigma0_sq, double beta);

/// Monte-Carlo E_{θ~Q} loss(θ).
TraceEstimate expected_loss_mc(const std::function<double(std::span<const double>)>& loss,
                               const GaussianPosterior& post, std::size_t samples, Rng& rng);

/// E_{θ~Q} of the robust training loss; adversarial examples are recomputed
/// for every weight draw.
TraceEstimate expected_loss_mc(const MlpNetwork& net, const Dataset& data, const RobustLossKind& kind,
                               const AttackConfig& attack, const GaussianPosterior& post, std::size_t samples,
                               Rng& rng);

/// R̂ + ‖θ‖²/(2βσ0²) + (σ0²/2)·trh + C.
double bound_surrogate(double empirical_risk, double theta_sq, const PacBayesConfig& cfg, double trh_value);

/// Network form: R̂ is the mean robust loss at the given adversarial inputs.
double bound_surrogate(const MlpNetwork& net, const Matrix& x, const Matrix& x_adv,
                       std::span<const std::size_t> labels, const RobustLossKind& kind,
                       const PacBayesConfig& cfg, double trh_value);

}  // namespace trh
