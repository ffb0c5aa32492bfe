#include "trhreg/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "trhreg/autodiff.hpp"
#include "trhreg/losses.hpp"

namespace trh {

Norm parse_norm(const std::string& s) {
  if (s == "linf" || s == "Linf" || s == "inf") return Norm::Linf;
  if (s == "l2" || s == "L2") return Norm::L2;
  throw std::invalid_argument("unknown norm '" + s + "' (expected linf|l2)");
}

std::string to_string(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

InnerLoss parse_inner_loss(const std::string& s) {
  if (s == "ce") return InnerLoss::CE;
  if (s == "kl") return InnerLoss::KL;
  if (s == "mart") return InnerLoss::MART;
  throw std::invalid_argument("unknown inner loss '" + s + "' (expected ce|kl|mart)");
}

void AttackConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("attack.delta must be > 0");
  if (steps < 1) throw std::invalid_argument("attack.steps must be >= 1");
  if (step_size < 0.0) throw std::invalid_argument("attack.step_size must be > 0");
  if (restarts < 1) throw std::invalid_argument("attack.restarts must be >= 1");
  if (clamp && !(clamp->first < clamp->second)) throw std::invalid_argument("attack.clamp needs lo < hi");
}

namespace {

double l2_dist(std::span<const double> v, std::span<const double> x0) {
  double sq = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sq += (v[i] - x0[i]) * (v[i] - x0[i]);
  return std::sqrt(sq);
}

// Rounding in x0 +/- delta or in the rescale can leave the computed distance
// a few ulps above delta; the nudges below make membership exact.
void project_into(std::span<double> v, std::span<const double> x0, Norm norm, double delta) {
  if (norm == Norm::Linf) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = std::clamp(v[i], x0[i] - delta, x0[i] + delta);
      while (std::abs(v[i] - x0[i]) > delta) v[i] = std::nextafter(v[i], x0[i]);
    }
    return;
  }
  const double n = l2_dist(v, x0);
  if (n <= delta) return;
  const Vector d(v.begin(), v.end());
  for (double f = delta / n;; f = std::nextafter(f, 0.0)) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x0[i] + (d[i] - x0[i]) * f;
    if (l2_dist(v, x0) <= delta) return;
  }
}

void random_start(std::span<double> v, std::span<const double> x0, Norm norm, double delta, Rng& rng) {
  if (norm == Norm::Linf) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x0[i] + rng.uniform(-delta, delta);
    return;
  }
  Vector dir = normal_vector(v.size(), rng);
  const double n = norm2(dir);
  const double r = delta * std::pow(rng.uniform(), 1.0 / static_cast<double>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x0[i] + (n > 0.0 ? dir[i] * r / n : 0.0);
}

/// One PGD restart for every row of x.
Matrix run_restart(const Matrix& x, const InputGradient& grad, const AttackConfig& cfg, const Rng& rng,
                   std::size_t restart) {
  Matrix adv = x;
  if (cfg.random_start) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      Rng r = rng.derive(i).derive(restart);
      random_start(adv.row(i), x.row(i), cfg.norm, cfg.delta, r);
      if (cfg.clamp)
        for (double& v : adv.row(i)) v = std::clamp(v, cfg.clamp->first, cfg.clamp->second);
    }
  }
  const double step = cfg.effective_step_size();
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    const Matrix g = grad(adv);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto row = adv.row(i);
      auto gr = g.row(i);
      if (cfg.norm == Norm::Linf) {
        for (std::size_t j = 0; j < row.size(); ++j)
          row[j] += step * (gr[j] > 0.0 ? 1.0 : (gr[j] < 0.0 ? -1.0 : 0.0));
      } else {
        const double n = norm2(gr);
        if (n == 0.0) continue;
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += step * gr[j] / n;
      }
      project_into(row, x.row(i), cfg.norm, cfg.delta);
      if (cfg.clamp)
        for (double& v : row) v = std::clamp(v, cfg.clamp->first, cfg.clamp->second);
    }
  }
  return adv;
}

}  // namespace

Vector project(std::span<const double> x_adv, std::span<const double> x0, Norm norm, double delta) {
  if (x_adv.size() != x0.size()) throw std::invalid_argument("project: dimension mismatch");
  Vector out(x_adv.begin(), x_adv.end());
  project_into(out, x0, norm, delta);
  return out;
}

void project_rows(Matrix& x_adv, const Matrix& x0, Norm norm, double delta) {
  if (!x_adv.same_shape(x0)) throw std::invalid_argument("project_rows: shape mismatch");
  for (std::size_t i = 0; i < x_adv.rows(); ++i) project_into(x_adv.row(i), x0.row(i), norm, delta);
}

Matrix pgd_generic(const Matrix& x, const InputGradient& grad, const InputLoss& loss,
                   const AttackConfig& cfg, const Rng& rng) {
  if (cfg.delta == 0.0) return x;
  Matrix best = run_restart(x, grad, cfg, rng, 0);
  if (cfg.restarts == 1) return best;
  Vector best_loss = loss(best);
  for (std::size_t r = 1; r < cfg.restarts; ++r) {
    const Matrix cand = run_restart(x, grad, cfg, rng, r);
    const Vector l = loss(cand);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (l[i] > best_loss[i]) {
        best_loss[i] = l[i];
        std::copy(cand.row(i).begin(), cand.row(i).end(), best.row(i).begin());
      }
    }
  }
  return best;
}

namespace {

struct InnerObjective {
  const MlpNetwork& net;
  Matrix onehot;
  Matrix clean_logits;  // KL only
  bool kl = false;

  ad::Var per_example(ad::Tape& t, const TapeNetwork& tn, ad::Var x) const {
    const ad::Var g = tape_forward(tn, x).logits;
    if (kl) return tape::kl_div(t.constant(clean_logits), g);
    return tape::cross_entropy(g, onehot);
  }

  Matrix gradient(const Matrix& x) const {
    ad::Tape t;
    const TapeNetwork tn = bind(t, net, false);
    const ad::Var xv = t.variable(x);
    t.backward(ad::sum(per_example(t, tn, xv)));
    return t.gradient(xv);
  }

  Vector losses(const Matrix& x) const {
    ad::Tape t;
    const TapeNetwork tn = bind(t, net, false);
    const Matrix v = per_example(t, tn, t.constant(x)).value();
    return Vector(v.data().begin(), v.data().end());
  }
};

Matrix batch_logits(const MlpNetwork& net, const Matrix& x) {
  ad::Tape t;
  const TapeNetwork tn = bind(t, net, false);
  return tape_forward(tn, t.constant(x)).logits.value();
}

}  // namespace

Matrix pgd_batch(const MlpNetwork& net, const Matrix& x, std::span<const std::size_t> labels,
                 const AttackConfig& cfg, const Rng& rng) {
  if (x.rows() != labels.size()) throw std::invalid_argument("pgd: inputs/labels size mismatch");
  InnerObjective obj{net, one_hot(labels, net.num_classes()), {}, cfg.inner_loss == InnerLoss::KL};
  if (obj.kl) obj.clean_logits = batch_logits(net, x);
  return pgd_generic(
      x, [&](const Matrix& m) { return obj.gradient(m); }, [&](const Matrix& m) { return obj.losses(m); },
      cfg, rng);
}

Vector pgd(const MlpNetwork& net, std::span<const double> x, std::size_t y, const AttackConfig& cfg,
           const Rng& rng) {
  const Matrix xm = Matrix::row_vector(x);
  const std::size_t labels[] = {y};
  const Matrix out = pgd_batch(net, xm, labels, cfg, rng);
  return Vector(out.data().begin(), out.data().end());
}

std::size_t predict(const MlpNetwork& net, std::span<const double> x) {
  const Vector g = logits(net, x);
  return static_cast<std::size_t>(std::max_element(g.begin(), g.end()) - g.begin());
}

double clean_accuracy(const MlpNetwork& net, const Dataset& ds) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += predict(net, ds.inputs.row(i)) == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double eval_robust_accuracy(const MlpNetwork& net, const Dataset& ds, const AttackConfig& cfg,
                            std::uint64_t seed) {
  ds.validate();
  if (cfg.delta == 0.0) return clean_accuracy(net, ds);
  if (cfg.delta < 0.0) throw std::invalid_argument("attack.delta must be >= 0");
  AttackConfig ce = cfg;
  ce.inner_loss = InnerLoss::CE;
  InnerObjective obj{net, one_hot(ds.labels, net.num_classes()), {}, false};
  const Rng rng(seed, 0x65766131);
  std::vector<char> robust(ds.size(), 1);
  for (std::size_t r = 0; r < ce.restarts; ++r) {
    const Matrix adv = run_restart(ds.inputs, [&](const Matrix& m) { return obj.gradient(m); }, ce, rng, r);
    const Matrix g = batch_logits(net, adv);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto row = g.row(i);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (pred != ds.labels[i]) robust[i] = 0;
    }
  }
  std::size_t n = 0;
  for (char c : robust) n += c;
  return static_cast<double>(n) / static_cast<double>(ds.size());
}

}  // namespace trh
