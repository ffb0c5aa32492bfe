#include "trhreg/trh.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

#include "trhreg/theorem4.hpp"

namespace trh {

LambdaSchedule parse_lambda_schedule(const std::string& s) {
  if (s == "constant") return LambdaSchedule::Constant;
  if (s == "linear") return LambdaSchedule::Linear;
  if (s == "multistep") return LambdaSchedule::Multistep;
  throw std::invalid_argument("unknown lambda schedule '" + s + "' (expected constant|linear|multistep)");
}

std::string to_string(LambdaSchedule s) {
  switch (s) {
    case LambdaSchedule::Constant: return "constant";
    case LambdaSchedule::Linear: return "linear";
    case LambdaSchedule::Multistep: return "multistep";
  }
  return "?";
}

TrHScope parse_trh_scope(const std::string& s) {
  if (s == "top") return TrHScope::Top;
  if (s == "full") return TrHScope::Full;
  throw std::invalid_argument("unknown trh scope '" + s + "' (expected top|full)");
}

void TrHConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("trh.lambda must be >= 0");
}

namespace {

double sum_h(const SoftmaxDerivs& d) { return sum(d.h); }

}  // namespace

double trh_at(const ForwardTrace& adv) {
  return squared_norm(adv.features()) * sum_h(softmax_derivs(adv.logits));
}

double trh_trades(const ForwardTrace& clean, const ForwardTrace& adv, double lambda_t) {
  const double clean_term = squared_norm(clean.features()) * sum_h(softmax_derivs(clean.logits));
  return clean_term + lambda_t * trh_at(adv);
}

std::pair<double, TradesFullTerms> trh_trades_full(const ForwardTrace& clean, const ForwardTrace& adv,
                                                   double lambda_t) {
  const SoftmaxDerivs c = softmax_derivs(clean.logits);
  const SoftmaxDerivs a = softmax_derivs(adv.logits);
  const Vector log_s = log_softmax(clean.logits);
  const Vector log_sp = log_softmax(adv.logits);
  const std::size_t k = c.s.size();
  TradesFullTerms t;
  t.psi.assign(k, 0.0);
  t.psi_prime.assign(k, 0.0);
  t.omega.assign(k, 0.0);
  t.omega_prime.assign(k, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      t.psi[r] += c.psi(r, i) * log_s[i];
      t.psi_prime[r] += c.psi(r, i) * log_sp[i];
      t.omega[r] += c.phi(i, r) * c.psi(i, r);
      t.omega_prime[r] += c.phi(i, r) * a.psi(i, r);
    }
  }
  // Second derivative of KL in g_k alone is ∂_k[Σ_i Φ_ik (log s_i − log s′_i)]
  // = s_k(1−2s_k)(ψ_k − ψ′_k) + ω_k; the mixed g_k, g′_k derivatives give
  // −h_k (from s′ − s) and −ω′_k (from Φ·log s′).
  double same = 0.0;
  double cross = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    same += c.s[r] * (1.0 - 2.0 * c.s[r]) * (t.psi[r] - t.psi_prime[r]) + t.omega[r];
    cross += c.h[r] + t.omega_prime[r];
  }
  t.g_term = squared_norm(clean.features()) * same - dot(clean.features(), adv.features()) * cross;
  return {trh_trades(clean, adv, lambda_t) + lambda_t * t.g_term, t};
}

double trh_alp(const ForwardTrace& clean, const ForwardTrace& adv, double lambda_a) {
  const double ce = trh_at(adv);
  if (lambda_a == 0.0) return ce;
  const Vector c = softmax(clean.logits);
  const SoftmaxDerivs a = softmax_derivs(adv.logits);
  const std::size_t k = c.size();
  double pair = 0.0;
  for (std::size_t col = 0; col < k; ++col) {
    double phi_sq = 0.0;
    double resid = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      phi_sq += a.phi(i, col) * a.phi(i, col);
      resid += (c[i] - a.s[i]) * a.psi(col, i);
    }
    pair += phi_sq - a.s[col] * (1.0 - 2.0 * a.s[col]) * resid;
  }
  return ce + lambda_a * 2.0 * squared_norm(adv.features()) * pair;
}

double trh_mart(const ForwardTrace& clean, const ForwardTrace& adv, std::size_t y, double lambda_m) {
  const SoftmaxDerivs c = softmax_derivs(clean.logits);
  const SoftmaxDerivs a = softmax_derivs(adv.logits);
  const std::size_t kappa = kappa_star(a.s, y);
  const std::size_t k = a.s.size();
  double rest = 0.0;  // 1 − p
  for (std::size_t i = 0; i < k; ++i)
    if (i != kappa) rest += a.s[i];
  double margin = 0.0;
  for (std::size_t col = 0; col < k; ++col) {
    const double dphi = a.s[col] * (1.0 - 2.0 * a.s[col]) * a.psi(col, kappa);
    margin += (dphi * rest + a.phi(kappa, col) * a.phi(kappa, col)) / (rest * rest);
  }
  double not_y = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    if (i != y) not_y += c.s[i];
  const double zp = squared_norm(adv.features());
  return squared_norm(clean.features()) * sum_h(c) + zp * margin + lambda_m * not_y * zp * sum_h(a);
}

double trh_top(const RobustLossKind& kind, const ForwardTrace& clean, const ForwardTrace& adv, std::size_t y,
               bool full_gradient) {
  switch (kind.variant) {
    case RobustLossKind::Variant::AT:
      return trh_at(adv);
    case RobustLossKind::Variant::TRADES:
      return full_gradient ? trh_trades_full(clean, adv, kind.penalty).first
                           : trh_trades(clean, adv, kind.penalty);
    case RobustLossKind::Variant::ALP:
      return trh_alp(clean, adv, kind.penalty);
    case RobustLossKind::Variant::MART:
      return trh_mart(clean, adv, y, kind.penalty);
  }
  throw std::logic_error("trh_top: unknown variant");
}

namespace tape {

namespace {

ad::Var sq_norm(ad::Var z) { return ad::row_sum(ad::square(z)); }

/// 1ᵀh per row.
ad::Var sum_h(ad::Var probs) { return ad::row_sum(probs - ad::square(probs)); }

}  // namespace

ad::Var trh_top(const RobustLossKind& kind, const TapeForward* clean, const TapeForward& adv,
                std::span<const std::size_t> labels, bool full_gradient) {
  ad::Tape& t = adv.logits.tape();
  const std::size_t k = adv.logits.cols();
  const ad::Var zp = sq_norm(adv.features());
  const ad::Var sp = ad::softmax_rows(adv.logits);
  const ad::Var at_term = zp * sum_h(sp);
  if (kind.variant == RobustLossKind::Variant::AT) return at_term;
  if (!clean) throw std::invalid_argument("trh_top: loss kind needs the clean forward pass");
  const ad::Var z = sq_norm(clean->features());
  const ad::Var s = ad::softmax_rows(clean->logits);
  const ad::Var clean_term = z * sum_h(s);

  switch (kind.variant) {
    case RobustLossKind::Variant::TRADES: {
      ad::Var out = clean_term + kind.penalty * at_term;
      if (!full_gradient) return out;
      // G = ‖z‖² Σ_k [s_k(1−2s_k)(d_k − KL) + h_k] − 2(z·z′)·1ᵀh, d = log s − log s′.
      const ad::Var d = ad::log_softmax_rows(clean->logits) - ad::log_softmax_rows(adv.logits);
      const ad::Var kl = ad::row_sum(s * d);
      const ad::Var coef = s - 2.0 * ad::square(s);
      const ad::Var same = ad::row_sum(coef * d) - kl * ad::row_sum(coef) + sum_h(s);
      const ad::Var zz = ad::row_sum(clean->features() * adv.features());
      const ad::Var g = z * same - 2.0 * (zz * sum_h(s));
      return out + kind.penalty * g;
    }
    case RobustLossKind::Variant::ALP: {
      if (kind.penalty == 0.0) return at_term;
      // 2‖z′‖² Σ_k [s′_k²(1 − 2s′_k + q′) − s′_k(1−2s′_k)((c_k − s′_k) − (c·s′ − q′))]
      const ad::Var q = ad::row_sum(ad::square(sp));
      const ad::Var cs = ad::row_sum(s * sp);
      const ad::Var a = ad::square(sp) * ad::add_col(1.0 - 2.0 * sp, q);
      const ad::Var resid = ad::add_col(s - sp, q - cs);
      const ad::Var b = (sp - 2.0 * ad::square(sp)) * resid;
      return at_term + kind.penalty * 2.0 * (zp * ad::row_sum(a - b));
    }
    case RobustLossKind::Variant::MART: {
      // ‖z′‖² [2p(q′ − p)/(1 − p) + p²(1 − 2p + q′)/(1 − p)²]
      const Matrix kappa = kappa_star_mask(adv.logits.value(), labels);
      Matrix others = kappa;
      for (double& v : others.data()) v = 1.0 - v;
      const ad::Var p = ad::row_sum(sp * t.constant(kappa));
      const ad::Var rest = ad::row_sum(sp * t.constant(others));
      const ad::Var q = ad::row_sum(ad::square(sp));
      const ad::Var first = 2.0 * (p * (q - p)) / rest;
      const ad::Var second = (ad::square(p) * (q - 2.0 * p + 1.0)) / ad::square(rest);
      Matrix not_y = one_hot(labels, k);
      for (double& v : not_y.data()) v = 1.0 - v;
      const ad::Var weight = ad::row_sum(s * t.constant(not_y));
      return clean_term + zp * (first + second) + kind.penalty * (weight * at_term);
    }
    case RobustLossKind::Variant::AT:
      break;
  }
  throw std::logic_error("trh_top: unknown variant");
}

}  // namespace tape

ad::Var algorithm1_loss(ad::Tape& tape, const TapeNetwork& net, const Matrix& x, const Matrix& x_adv,
                        std::span<const std::size_t> labels, const ObjectiveSpec& spec) {
  const TapeForward adv = tape_forward(net, tape.constant(x_adv));
  std::optional<TapeForward> clean;
  if (spec.kind.uses_clean()) clean = tape_forward(net, tape.constant(x));
  const ad::Var clean_logits = clean ? clean->logits : adv.logits;
  ad::Var per = tape::robust_loss(spec.kind, clean_logits, adv.logits, labels);
  if (spec.lambda != 0.0) {
    ad::Var reg;
    if (spec.trh.scope == TrHScope::Full) {
      if (spec.kind.variant != RobustLossKind::Variant::AT)
        throw std::invalid_argument("full-network TrH regularization is only defined for AT");
      reg = tape::trh_ce_full(net, adv);
    } else {
      reg = tape::trh_top(spec.kind, clean ? &*clean : nullptr, adv, labels, !spec.trh.stop_grad_clean);
    }
    per = per + spec.lambda * reg;
  }
  ad::Var value = ad::mean(per);
  if (spec.gamma != 0.0) {
    ad::Var norm;
    bool first = true;
    auto add = [&](ad::Var v) {
      const ad::Var s = ad::sum(ad::square(v));
      norm = first ? s : norm + s;
      first = false;
    };
    for (std::size_t i = 0; i < net.weights.size(); ++i) {
      add(net.weights[i]);
      if (net.biases[i]) add(*net.biases[i]);
    }
    value = value + spec.gamma * norm;
  }
  return value;
}

AttackConfig inner_attack_for(const RobustLossKind& kind, AttackConfig cfg) {
  cfg.inner_loss = kind.variant == RobustLossKind::Variant::TRADES ? InnerLoss::KL : InnerLoss::CE;
  return cfg;
}

ObjectiveResult algorithm1_objective(const MlpNetwork& net, const Matrix& x, std::span<const std::size_t> labels,
                                     const ObjectiveSpec& spec, const AttackConfig& attack, const Rng& rng) {
  ObjectiveResult out;
  out.x_adv = pgd_batch(net, x, labels, inner_attack_for(spec.kind, attack), rng);
  const GradientResult g = backprop(net, [&](ad::Tape& t, const TapeNetwork& tn) {
    return algorithm1_loss(t, tn, x, out.x_adv, labels, spec);
  });
  out.value = g.loss;
  out.gradient = g.gradient;
  return out;
}

}  // namespace trh
