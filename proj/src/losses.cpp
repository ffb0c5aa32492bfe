#include "trhreg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace trh {

Vector log_softmax(std::span<const double> g) {
  if (g.empty()) throw std::invalid_argument("log_softmax: empty logits");
  const double mx = *std::max_element(g.begin(), g.end());
  double z = 0.0;
  for (double v : g) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  Vector out(g.begin(), g.end());
  for (double& v : out) v -= lse;
  return out;
}

Vector softmax(std::span<const double> g) {
  if (g.empty()) throw std::invalid_argument("softmax: empty logits");
  const double mx = *std::max_element(g.begin(), g.end());
  Vector out(g.size());
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = std::exp(g[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

SoftmaxDerivs softmax_derivs(std::span<const double> logits) {
  const std::size_t k = logits.size();
  if (k < 2) throw std::invalid_argument("softmax_derivs: need K >= 2");
  SoftmaxDerivs d;
  d.s = softmax(logits);
  d.phi = Matrix(k, k);
  d.psi = Matrix(k, k);
  d.h = Vector(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      d.phi(i, j) = (i == j ? d.s[i] : 0.0) - d.s[i] * d.s[j];
      d.psi(i, j) = (i == j ? 1.0 : 0.0) - d.s[j];
    }
    d.h[i] = d.s[i] - d.s[i] * d.s[i];
  }
  return d;
}

double cross_entropy(std::span<const double> logits, std::size_t y) {
  if (y >= logits.size()) throw std::out_of_range("cross_entropy: label out of range");
  return -log_softmax(logits)[y];
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_div: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return std::max(kl, 0.0);
}

double kl_div_logits(std::span<const double> g_p, std::span<const double> g_q) {
  const Vector lp = log_softmax(g_p);
  const Vector lq = log_softmax(g_q);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, 0.0);
}

double alp_pair_loss(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("alp_pair_loss: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - q[i]) * (p[i] - q[i]);
  return s;
}

std::size_t kappa_star(std::span<const double> p, std::size_t y) {
  if (p.size() < 2 || y >= p.size()) throw std::invalid_argument("kappa_star: bad label or size");
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (k != y && p[k] > p[best]) best = k;
  return best;
}

MartLosses mart_losses(const ForwardTrace& clean, const ForwardTrace& adv, std::size_t y) {
  const Vector s_adv = softmax(adv.logits);
  const Vector s_clean = softmax(clean.logits);
  MartLosses out;
  out.kappa_star = kappa_star(s_adv, y);
  double rest = 0.0;  // 1 − s_adv[κ*] without cancellation
  for (std::size_t k = 0; k < s_adv.size(); ++k)
    if (k != out.kappa_star) rest += s_adv[k];
  out.bce = cross_entropy(clean.logits, y) - std::log(rest);
  double not_y = 0.0;
  for (std::size_t k = 0; k < s_clean.size(); ++k)
    if (k != y) not_y += s_clean[k];
  out.wkl = kl_div_logits(clean.logits, adv.logits) * not_y;
  return out;
}

RobustLossKind RobustLossKind::make(Variant v, double p) {
  if (!(p >= 0.0)) throw std::invalid_argument("robust loss penalty must be >= 0");
  return {v, p};
}

std::string RobustLossKind::name() const {
  switch (variant) {
    case Variant::AT: return "at";
    case Variant::TRADES: return "trades";
    case Variant::ALP: return "alp";
    case Variant::MART: return "mart";
  }
  return "?";
}

RobustLossKind parse_loss_kind(const std::string& name, double penalty) {
  if (name == "at") return RobustLossKind::at();
  if (name == "trades") return RobustLossKind::trades(penalty);
  if (name == "alp") return RobustLossKind::alp(penalty);
  if (name == "mart") return RobustLossKind::mart(penalty);
  throw std::invalid_argument("unknown loss kind '" + name + "' (expected at|trades|alp|mart)");
}

double robust_loss(const RobustLossKind& kind, const ForwardTrace& clean, const ForwardTrace& adv,
                   std::size_t y) {
  switch (kind.variant) {
    case RobustLossKind::Variant::AT:
      return cross_entropy(adv.logits, y);
    case RobustLossKind::Variant::TRADES:
      return cross_entropy(clean.logits, y) + kind.penalty * kl_div_logits(clean.logits, adv.logits);
    case RobustLossKind::Variant::ALP:
      return cross_entropy(adv.logits, y) +
             kind.penalty * alp_pair_loss(softmax(clean.logits), softmax(adv.logits));
    case RobustLossKind::Variant::MART: {
      const MartLosses m = mart_losses(clean, adv, y);
      return m.bce + kind.penalty * m.wkl;
    }
  }
  return 0.0;
}

Matrix one_hot(std::span<const std::size_t> labels, std::size_t k) {
  Matrix out(labels.size(), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) throw std::out_of_range("one_hot: label out of range");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

namespace tape {

ad::Var cross_entropy(ad::Var logits, const Matrix& onehot) {
  ad::Tape& t = logits.tape();
  return -ad::row_sum(ad::log_softmax_rows(logits) * t.constant(onehot));
}

ad::Var kl_div(ad::Var logits_p, ad::Var logits_q) {
  const ad::Var lp = ad::log_softmax_rows(logits_p);
  const ad::Var lq = ad::log_softmax_rows(logits_q);
  return ad::row_sum(ad::softmax_rows(logits_p) * (lp - lq));
}

ad::Var alp_pair(ad::Var logits_clean, ad::Var logits_adv) {
  return ad::row_sum(ad::square(ad::softmax_rows(logits_clean) - ad::softmax_rows(logits_adv)));
}

Matrix kappa_star_mask(const Matrix& adv_logits, std::span<const std::size_t> labels) {
  Matrix mask(adv_logits.rows(), adv_logits.cols());
  for (std::size_t r = 0; r < adv_logits.rows(); ++r) {
    const Vector s = softmax(adv_logits.row(r));
    mask(r, kappa_star(s, labels[r])) = 1.0;
  }
  return mask;
}

ad::Var mart_margin(ad::Var logits_adv, const Matrix& kappa_mask) {
  ad::Tape& t = logits_adv.tape();
  Matrix others = kappa_mask;
  for (double& v : others.data()) v = 1.0 - v;
  return -ad::log(ad::row_sum(ad::softmax_rows(logits_adv) * t.constant(others)));
}

ad::Var robust_loss(const RobustLossKind& kind, ad::Var logits_clean, ad::Var logits_adv,
                    std::span<const std::size_t> labels) {
  ad::Tape& t = logits_adv.tape();
  const Matrix y = one_hot(labels, logits_adv.cols());
  switch (kind.variant) {
    case RobustLossKind::Variant::AT:
      return cross_entropy(logits_adv, y);
    case RobustLossKind::Variant::TRADES:
      return cross_entropy(logits_clean, y) + kind.penalty * kl_div(logits_clean, logits_adv);
    case RobustLossKind::Variant::ALP:
      return cross_entropy(logits_adv, y) + kind.penalty * alp_pair(logits_clean, logits_adv);
    case RobustLossKind::Variant::MART: {
      const Matrix kappa = kappa_star_mask(logits_adv.value(), labels);
      Matrix not_y = y;
      for (double& v : not_y.data()) v = 1.0 - v;
      const ad::Var weight = ad::row_sum(ad::softmax_rows(logits_clean) * t.constant(not_y));
      const ad::Var bce = cross_entropy(logits_clean, y) + mart_margin(logits_adv, kappa);
      return bce + kind.penalty * (kl_div(logits_clean, logits_adv) * weight);
    }
  }
  throw std::logic_error("robust_loss: unknown variant");
}

}  // namespace tape

}  // namespace trh
