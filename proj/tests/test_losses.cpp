#include <cmath>

#include "doctest.h"
#include "trhreg/losses.hpp"

using namespace trh;

namespace {

Vector random_logits(std::size_t k, Rng& rng, double scale = 2.0) {
  Vector g(k);
  for (double& v : g) v = scale * rng.normal();
  return g;
}

Vector random_probs(std::size_t k, Rng& rng) {
  Vector p(k);
  double z = 0.0;
  for (double& v : p) z += (v = rng.uniform() + 1e-3);
  for (double& v : p) v /= z;
  return p;
}

// Independent softmax written out from exponentials directly.
Vector naive_softmax(const Vector& g) {
  Vector e(g.size());
  double z = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) z += (e[i] = std::exp(g[i]));
  for (double& v : e) v /= z;
  return e;
}

ForwardTrace trace_of(std::span<const double> g) {
  ForwardTrace t;
  t.inputs.push_back(Vector{1.0});
  t.logits.assign(g.begin(), g.end());
  t.preact.push_back(t.logits);
  return t;
}

}  // namespace

TEST_CASE("softmax_derivs at zero logits") {
  const SoftmaxDerivs d = softmax_derivs(Vector{0.0, 0.0});
  CHECK(d.s == Vector{0.5, 0.5});
  CHECK(d.phi(0, 0) == 0.25);
  CHECK(d.phi(0, 1) == -0.25);
  CHECK(d.psi(0, 0) == 0.5);
  CHECK(d.psi(1, 0) == -0.5);
  CHECK(d.h == Vector{0.25, 0.25});
}

TEST_CASE("uniform logits: 1^T h = 1 - 1/K") {
  for (std::size_t k = 2; k <= 10; ++k) {
    const SoftmaxDerivs d = softmax_derivs(Vector(k, 0.7));
    CHECK(sum(d.h) == doctest::Approx(1.0 - 1.0 / k).epsilon(1e-14));
  }
}

TEST_CASE("Phi and Psi match finite differences of s and log s") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector g = random_logits(4, rng);
    const SoftmaxDerivs d = softmax_derivs(g);
    const double h = 1e-6;
    for (std::size_t j = 0; j < 4; ++j) {
      Vector p = g, m = g;
      p[j] += h;
      m[j] -= h;
      const Vector sp = naive_softmax(p), sm = naive_softmax(m);
      for (std::size_t i = 0; i < 4; ++i) {
        const double fd_s = (sp[i] - sm[i]) / (2 * h);
        const double fd_log = (std::log(sp[i]) - std::log(sm[i])) / (2 * h);
        CHECK(std::abs(d.phi(i, j) - fd_s) <= 1e-7 * std::max(1.0, std::abs(fd_s)));
        CHECK(std::abs(d.psi(i, j) - fd_log) <= 1e-7 * std::max(1.0, std::abs(fd_log)));
      }
    }
  }
}

TEST_CASE("Jacobian identities: Phi 1 = 0, Psi 1 = 0, Phi = diag(s) Psi, h = diag(Phi)") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 6;
    const SoftmaxDerivs d = softmax_derivs(random_logits(k, rng, 3.0));
    for (std::size_t i = 0; i < k; ++i) {
      double r_phi = 0.0, r_psi = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        r_phi += d.phi(i, j);
        r_psi += d.psi(i, j);
        CHECK(std::abs(d.phi(i, j) - d.s[i] * d.psi(i, j)) <= 1e-12);
      }
      CHECK(std::abs(r_phi) <= 1e-12);
      CHECK(std::abs(r_psi) <= 1e-12);
      CHECK(d.h[i] == doctest::Approx(d.phi(i, i)).epsilon(1e-14));
    }
    const double th = sum(d.h);
    CHECK(th > 0.0);
    CHECK(th <= 1.0 - 1.0 / k + 1e-15);
  }
}

TEST_CASE("softmax is stable for large logits") {
  const Vector s = softmax(Vector{1000.0, 0.0});
  CHECK(s[0] == 1.0);
  CHECK(std::isfinite(s[1]));
  const Vector ls = log_softmax(Vector{1000.0, 0.0});
  CHECK(ls[1] == doctest::Approx(-1000.0));
}

TEST_CASE("cross_entropy examples") {
  CHECK(cross_entropy(Vector{0.0, 0.0}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(cross_entropy(Vector{100.0, 0.0}, 0) == doctest::Approx(0.0));
  const double ref = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(cross_entropy(Vector{1.0, 2.0, 3.0}, 2) == doctest::Approx(ref).epsilon(1e-14));
  CHECK(cross_entropy(Vector{1.0, 2.0, 3.0}, 2) == doctest::Approx(0.407606).epsilon(1e-6));
}

TEST_CASE("kl_div examples and Gibbs inequality") {
  CHECK(kl_div(Vector{0.3, 0.7}, Vector{0.3, 0.7}) == 0.0);
  CHECK(kl_div(Vector{0.5, 0.5}, Vector{0.25, 0.75}) ==
        doctest::Approx(0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0)).epsilon(1e-14));
  CHECK(kl_div(Vector{0.5, 0.5}, Vector{0.25, 0.75}) == doctest::Approx(0.143841).epsilon(1e-6));
  CHECK(kl_div(Vector{0.0, 1.0}, Vector{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vector p = random_probs(5, rng), q = random_probs(5, rng);
    CHECK(kl_div(p, q) >= 0.0);
  }
  for (int i = 0; i < 50; ++i) {
    const Vector a = random_logits(4, rng), b = random_logits(4, rng);
    CHECK(kl_div_logits(a, b) == doctest::Approx(kl_div(naive_softmax(a), naive_softmax(b))).epsilon(1e-10));
  }
}

TEST_CASE("alp_pair_loss examples") {
  CHECK(alp_pair_loss(Vector{0.2, 0.8}, Vector{0.2, 0.8}) == 0.0);
  CHECK(alp_pair_loss(Vector{1.0, 0.0}, Vector{0.0, 1.0}) == 2.0);
  CHECK(alp_pair_loss(Vector{0.5, 0.5}, Vector{0.25, 0.75}) == doctest::Approx(0.125).epsilon(1e-14));
}

TEST_CASE("kappa_star picks the largest non-true class, lowest index on ties") {
  CHECK(kappa_star(Vector{0.5, 0.25, 0.25}, 0) == 1);
  CHECK(kappa_star(Vector{0.1, 0.6, 0.3}, 1) == 2);
  CHECK(kappa_star(Vector{0.7, 0.3}, 0) == 1);
  CHECK(kappa_star(Vector{0.7, 0.3}, 1) == 0);
}

TEST_CASE("mart_losses examples and step-by-step evaluation") {
  const MartLosses m = mart_losses(trace_of(Vector{0.0, 0.0}), trace_of(Vector{0.0, 0.0}), 0);
  CHECK(m.bce == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  CHECK(m.wkl == 0.0);

  const MartLosses sat = mart_losses(trace_of(Vector{40.0, 0.0, 0.0}), trace_of(Vector{40.0, 0.0, 0.0}), 0);
  CHECK(sat.wkl < 1e-15);

  Rng rng(4);
  const Vector gc = random_logits(3, rng), ga = random_logits(3, rng);
  const std::size_t y = 1;
  const Vector sc = naive_softmax(gc), sa = naive_softmax(ga);
  const std::size_t ks = sa[0] >= sa[2] ? 0 : 2;
  const double bce = -std::log(sc[y]) - std::log(1.0 - sa[ks]);
  double kl = 0.0;
  for (std::size_t i = 0; i < 3; ++i) kl += sc[i] * std::log(sc[i] / sa[i]);
  const MartLosses r = mart_losses(trace_of(gc), trace_of(ga), y);
  CHECK(r.kappa_star == ks);
  CHECK(r.bce == doctest::Approx(bce).epsilon(1e-12));
  CHECK(r.wkl == doctest::Approx(kl * (1.0 - sc[y])).epsilon(1e-12));
}

TEST_CASE("robust losses are invariant to a constant logit shift") {
  Rng rng(5);
  const std::vector<RobustLossKind> kinds{RobustLossKind::at(), RobustLossKind::trades(6.0), RobustLossKind::alp(0.5),
                                          RobustLossKind::mart(5.0)};
  for (int trial = 0; trial < 50; ++trial) {
    const Vector gc = random_logits(4, rng), ga = random_logits(4, rng);
    const double c = 10.0 * rng.normal();
    Vector gc2 = gc, ga2 = ga;
    for (double& v : gc2) v += c;
    for (double& v : ga2) v += c;
    const std::size_t y = trial % 4;
    for (const auto& k : kinds) {
      const double a = robust_loss(k, trace_of(gc), trace_of(ga), y);
      const double b = robust_loss(k, trace_of(gc2), trace_of(ga2), y);
      CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(a)));
    }
    CHECK(std::abs(cross_entropy(gc, y) - cross_entropy(gc2, y)) <= 1e-10);
  }
}

TEST_CASE("robust_loss composes the documented pieces") {
  const Vector gc{0.3, -0.2, 1.0}, ga{-0.5, 0.4, 0.8};
  const std::size_t y = 2;
  const ForwardTrace c = trace_of(gc), a = trace_of(ga);
  CHECK(robust_loss(RobustLossKind::at(), c, a, y) == doctest::Approx(cross_entropy(ga, y)));
  CHECK(robust_loss(RobustLossKind::trades(6.0), c, a, y) ==
        doctest::Approx(cross_entropy(gc, y) + 6.0 * kl_div(naive_softmax(gc), naive_softmax(ga))));
  CHECK(robust_loss(RobustLossKind::alp(0.5), c, a, y) ==
        doctest::Approx(cross_entropy(ga, y) + 0.5 * alp_pair_loss(naive_softmax(gc), naive_softmax(ga))));
  const MartLosses m = mart_losses(c, a, y);
  CHECK(robust_loss(RobustLossKind::mart(5.0), c, a, y) == doctest::Approx(m.bce + 5.0 * m.wkl));
}

TEST_CASE("parse_loss_kind and validation") {
  CHECK(parse_loss_kind("at", 0.0).variant == RobustLossKind::Variant::AT);
  CHECK(parse_loss_kind("trades", 6.0).penalty == 6.0);
  CHECK(parse_loss_kind("mart", 5.0).name() == "mart");
  CHECK_THROWS(parse_loss_kind("hinge", 1.0));
  CHECK_THROWS(RobustLossKind::trades(-1.0));
}

TEST_CASE("tape losses agree with the scalar versions row by row") {
  Rng rng(6);
  Matrix gc(3, 4), ga(3, 4);
  for (double& v : gc.data()) v = rng.normal();
  for (double& v : ga.data()) v = rng.normal();
  const std::vector<std::size_t> y{0, 3, 1};
  const std::vector<RobustLossKind> kinds{RobustLossKind::at(), RobustLossKind::trades(6.0), RobustLossKind::alp(0.5),
                                          RobustLossKind::mart(5.0)};
  for (const auto& k : kinds) {
    ad::Tape t;
    const Matrix out = tape::robust_loss(k, t.constant(gc), t.constant(ga), y).value();
    for (std::size_t r = 0; r < 3; ++r)
      CHECK(out(r, 0) == doctest::Approx(robust_loss(k, trace_of(gc.row(r)), trace_of(ga.row(r)), y[r])).epsilon(1e-12));
  }
  const Matrix oh = one_hot(y, 4);
  CHECK(oh(1, 3) == 1.0);
  CHECK(oh(1, 0) == 0.0);
  CHECK_THROWS(one_hot(std::vector<std::size_t>{4}, 4));
}
