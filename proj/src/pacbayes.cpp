#include "trhreg/pacbayes.hpp"

#include <cmath>

#include "trhreg/trh.hpp"

namespace trh {

GaussianPosterior GaussianPosterior::spherical(Vector mean, double sigma_sq) {
  GaussianPosterior p;
  p.mean = std::move(mean);
  p.sigma_q_sq = sigma_sq;
  p.validate();
  return p;
}

GaussianPosterior GaussianPosterior::diag(Vector mean, Vector sigma_sq) {
  GaussianPosterior p;
  p.mean = std::move(mean);
  p.diagonal = std::move(sigma_sq);
  p.validate();
  return p;
}

void GaussianPosterior::validate() const {
  if (is_spherical()) {
    if (!(sigma_q_sq > 0.0)) throw std::invalid_argument("posterior variance must be > 0");
    return;
  }
  if (diagonal.size() != mean.size()) throw std::invalid_argument("posterior variance length mismatch");
  for (double v : diagonal)
    if (!(v > 0.0)) throw std::invalid_argument("posterior variances must be > 0");
}

PacBayesConfig PacBayesConfig::from_gamma_lambda(double gamma, double lambda) {
  if (!(gamma > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("gamma and lambda must be > 0");
  PacBayesConfig c;
  c.sigma0_sq = 2.0 * lambda;
  c.beta = 1.0 / (2.0 * gamma * c.sigma0_sq);
  return c;
}

void PacBayesConfig::validate() const {
  if (!(sigma0_sq > 0.0)) throw std::invalid_argument("pacbayes.sigma0_sq must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("pacbayes.beta must be > 0");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("pacbayes.tau must be in (0, 1]");
  if (m < 1) throw std::invalid_argument("pacbayes.m must be >= 1");
}

void PacBayesConfig::check_reparameterization(double g, double l, double tol) const {
  const double eg = gamma();
  const double el = lambda();
  if (std::abs(g - eg) > tol * std::max(1.0, std::abs(eg)))
    throw std::invalid_argument("train.gamma = " + std::to_string(g) + " but 1/(2*beta*sigma0_sq) = " +
                                std::to_string(eg));
  if (std::abs(l - el) > tol * std::max(1.0, std::abs(el)))
    throw std::invalid_argument("trh.lambda = " + std::to_string(l) + " but sigma0_sq/2 = " + std::to_string(el));
}

double gaussian_kl(const GaussianPosterior& post, double sigma0_sq) {
  post.validate();
  if (!(sigma0_sq > 0.0)) throw std::invalid_argument("gaussian_kl: sigma0_sq must be > 0");
  const std::size_t n = post.mean.size();
  // Per-coordinate form keeps every summand ≥ 0: r − 1 − log r ≥ 0.
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = post.variance(i) / sigma0_sq;
    kl += (r - 1.0 - std::log(r)) + post.mean[i] * post.mean[i] / sigma0_sq;
  }
  return 0.5 * kl;
}

double optimal_sigma_spherical(double trace, double sigma0_sq, double beta, std::size_t n_params) {
  if (n_params == 0) throw std::invalid_argument("optimal_sigma_spherical: n_params must be >= 1");
  const double denom = 1.0 + sigma0_sq * beta * trace / static_cast<double>(n_params);
  if (!(denom > 0.0)) throw OutOfRegime("spherical posterior: 1 + sigma0^2*beta*Tr/N <= 0", {});
  return sigma0_sq / denom;
}

Vector optimal_sigma_diag(std::span<const double> hessian_diag, double sigma0_sq, double beta) {
  Vector out(hessian_diag.size());
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double denom = 1.0 + sigma0_sq * beta * hessian_diag[i];
    if (!(denom > 0.0)) {
      bad.push_back(i);
      continue;
    }
    out[i] = sigma0_sq / denom;
  }
  if (!bad.empty()) {
    std::string msg = "diagonal posterior: non-positive denominators at";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 10); ++i) msg += " " + std::to_string(bad[i]);
    if (bad.size() > 10) msg += " ...";
    throw OutOfRegime(msg, bad);
  }
  return out;
}

double second_order_objective_spherical(double sigma_q_sq, double trace, double theta_sq, std::size_t n,
                                        double sigma0_sq, double beta) {
  const double nn = static_cast<double>(n);
  const double r = sigma_q_sq / sigma0_sq;
  const double kl = 0.5 * (nn * (r - 1.0 - std::log(r)) + theta_sq / sigma0_sq);
  return 0.5 * sigma_q_sq * trace + kl / beta;
}

double second_order_objective_diag(std::span<const double> sigma_sq, std::span<const double> hessian_diag,
                                   double theta_sq, double sigma0_sq, double beta) {
  double curv = 0.0;
  double kl = theta_sq / sigma0_sq;
  for (std::size_t i = 0; i < sigma_sq.size(); ++i) {
    curv += sigma_sq[i] * hessian_diag[i];
    const double r = sigma_sq[i] / sigma0_sq;
    kl += r - 1.0 - std::log(r);
  }
  return 0.5 * curv + 0.5 * kl / beta;
}

TraceEstimate expected_loss_mc(const std::function<double(std::span<const double>)>& loss,
                               const GaussianPosterior& post, std::size_t samples, Rng& rng) {
  post.validate();
  if (samples < 1) throw std::invalid_argument("expected_loss_mc: samples must be >= 1");
  Vector values;
  values.reserve(samples);
  Vector theta(post.mean.size());
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < theta.size(); ++i)
      theta[i] = post.mean[i] + std::sqrt(post.variance(i)) * rng.normal();
    values.push_back(loss(theta));
  }
  TraceEstimate out;
  out.probes = samples;
  const double n = static_cast<double>(samples);
  out.estimate = sum(values) / n;
  if (samples > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.estimate) * (v - out.estimate);
    out.standard_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return out;
}

namespace {

double mean_robust_loss(const MlpNetwork& net, const Matrix& x, const Matrix& x_adv,
                        std::span<const std::size_t> labels, const RobustLossKind& kind) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const ForwardTrace adv = forward(net, x_adv.row(i));
    const ForwardTrace clean = kind.uses_clean() ? forward(net, x.row(i)) : adv;
    s += robust_loss(kind, clean, adv, labels[i]);
  }
  return s / static_cast<double>(labels.size());
}

}  // namespace

TraceEstimate expected_loss_mc(const MlpNetwork& net, const Dataset& data, const RobustLossKind& kind,
                               const AttackConfig& attack, const GaussianPosterior& post, std::size_t samples,
                               Rng& rng) {
  if (post.mean.size() != net.parameter_count())
    throw std::invalid_argument("expected_loss_mc: posterior dimension does not match the network");
  std::uint64_t draw = 0;
  const Rng attack_rng = rng.derive(0x61747461636bULL);
  return expected_loss_mc(
      [&](std::span<const double> theta) {
        const MlpNetwork sampled = unflatten_weights(net, theta);
        const AttackConfig inner = inner_attack_for(kind, attack);
        const Matrix x_adv = inner.delta > 0.0
                                 ? pgd_batch(sampled, data.inputs, data.labels, inner, attack_rng.derive(draw))
                                 : data.inputs;
        ++draw;
        return mean_robust_loss(sampled, data.inputs, x_adv, data.labels, kind);
      },
      post, samples, rng);
}

double bound_surrogate(double empirical_risk, double theta_sq, const PacBayesConfig& cfg, double trh_value) {
  return empirical_risk + theta_sq / (2.0 * cfg.beta * cfg.sigma0_sq) + (cfg.sigma0_sq / 2.0) * trh_value +
         cfg.c_const;
}

double bound_surrogate(const MlpNetwork& net, const Matrix& x, const Matrix& x_adv,
                       std::span<const std::size_t> labels, const RobustLossKind& kind,
                       const PacBayesConfig& cfg, double trh_value) {
  const Vector theta = flatten_weights(net);
  return bound_surrogate(mean_robust_loss(net, x, x_adv, labels, kind), squared_norm(theta), cfg, trh_value);
}

}  // namespace trh
