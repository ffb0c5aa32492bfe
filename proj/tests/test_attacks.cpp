#include <cmath>

#include "doctest.h"
#include "trhreg/attacks.hpp"
#include "trhreg/losses.hpp"

using namespace trh;

namespace {

double linf_dist(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

MlpNetwork moons_net(std::uint64_t seed, std::size_t width = 16) {
  Rng rng(seed);
  MlpNetwork net = MlpNetwork::random({2, width, width, 2}, true, rng);
  for (std::size_t l = 0; l + 1 < net.depth(); ++l)
    for (double& b : *net.bias(l)) b = 0.3 * rng.normal();
  return net;
}

}  // namespace

TEST_CASE("project examples") {
  CHECK(project(Vector{0.3, -0.3}, Vector{0.3, -0.3}, Norm::Linf, 0.1) == Vector{0.3, -0.3});
  CHECK(project(Vector{0.3, -0.3}, Vector{0.0, 0.0}, Norm::Linf, 0.1) == Vector{0.1, -0.1});
  const Vector p = project(Vector{3.0, 4.0}, Vector{0.0, 0.0}, Norm::L2, 1.0);
  CHECK(p[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(project(Vector{0.1, 0.1}, Vector{0.0, 0.0}, Norm::L2, 1.0) == Vector{0.1, 0.1});
}

TEST_CASE("project is idempotent") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const Vector x0 = normal_vector(5, rng), v = normal_vector(5, rng);
    for (Norm n : {Norm::Linf, Norm::L2}) {
      const Vector p = project(v, x0, n, 0.3);
      const Vector pp = project(p, x0, n, 0.3);
      for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(pp[k] - p[k]) <= 1e-15);
    }
  }
}

TEST_CASE("PGD output stays exactly in the ball over 10^4 randomized trials") {
  const MlpNetwork net = moons_net(2, 8);
  Rng rng(3);
  std::size_t violations = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Vector x = normal_vector(2, rng);
    AttackConfig cfg;
    cfg.norm = trial % 2 ? Norm::L2 : Norm::Linf;
    cfg.delta = 0.01 + rng.uniform();
    cfg.steps = 1 + rng.uniform_index(4);
    cfg.step_size = 3.0 * rng.uniform() * cfg.delta;
    cfg.random_start = trial % 3 != 0;
    cfg.inner_loss = trial % 5 == 0 ? InnerLoss::KL : InnerLoss::CE;
    const Vector xa = pgd(net, x, trial % 2, cfg, rng.derive(trial));
    const double d = cfg.norm == Norm::Linf ? linf_dist(xa, x) : l2_dist(xa, x);
    worst = std::max(worst, d - cfg.delta);
    violations += d > cfg.delta;
  }
  CHECK(violations == 0);
  CHECK(worst <= 0.0);
}

TEST_CASE("PGD respects the clamp box") {
  const MlpNetwork net = moons_net(4, 8);
  AttackConfig cfg;
  cfg.delta = 0.5;
  cfg.steps = 5;
  cfg.clamp = std::make_pair(0.0, 1.0);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    Vector x{rng.uniform(), rng.uniform()};
    const Vector xa = pgd(net, x, i % 2, cfg, rng.derive(i));
    for (double v : xa) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("single-step Linf PGD on a linear loss reaches c^T x + delta ||c||_1") {
  const Vector c{1.5, -0.5, 0.0, 2.0};
  const Matrix x = Matrix::from_rows({{0.1, 0.2, 0.3, 0.4}});
  AttackConfig cfg;
  cfg.delta = 0.05;
  cfg.steps = 1;
  cfg.step_size = 0.05;
  cfg.random_start = false;
  const InputGradient grad = [&](const Matrix& z) {
    Matrix g(z.rows(), z.cols());
    for (std::size_t r = 0; r < z.rows(); ++r)
      for (std::size_t k = 0; k < c.size(); ++k) g(r, k) = c[k];
    return g;
  };
  const InputLoss loss = [&](const Matrix& z) {
    Vector l(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) l[r] = dot(z.row(r), c);
    return l;
  };
  const Matrix xa = pgd_generic(x, grad, loss, cfg, Rng(6));
  double l1 = 0.0;
  for (double v : c) l1 += std::abs(v);
  CHECK(dot(xa.row(0), c) == doctest::Approx(dot(x.row(0), c) + cfg.delta * l1).epsilon(1e-14));
  CHECK(xa(0, 2) == x(0, 2));  // zero gradient coordinate keeps its value
}

TEST_CASE("FGSM on a linear softmax model attains the analytic worst-case margin") {
  Rng rng(7);
  MlpNetwork net({DenseLayer{Matrix(3, 2), std::nullopt}});
  for (double& v : net.weights(0).data()) v = rng.normal();
  AttackConfig cfg;
  cfg.delta = 0.1;
  cfg.steps = 1;
  cfg.step_size = 0.1;
  cfg.random_start = false;
  for (int i = 0; i < 100; ++i) {
    const Vector x = normal_vector(3, rng);
    const std::size_t y = i % 2;
    Vector c(3);
    for (std::size_t d = 0; d < 3; ++d) c[d] = net.weights(0)(d, 1 - y) - net.weights(0)(d, y);
    double l1 = 0.0;
    for (double v : c) l1 += std::abs(v);
    const Vector xa = pgd(net, x, y, cfg, rng.derive(i));
    CHECK(dot(xa, c) == doctest::Approx(dot(x, c) + cfg.delta * l1).epsilon(1e-12));
  }
}

TEST_CASE("delta = 0 leaves inputs unchanged and gives the clean accuracy bitwise") {
  const MlpNetwork net = moons_net(8);
  const Dataset ds = two_moons(200, 0.1, 9);
  AttackConfig cfg;
  cfg.delta = 0.0;
  cfg.steps = 10;
  cfg.restarts = 3;
  CHECK(eval_robust_accuracy(net, ds, cfg, 1) == clean_accuracy(net, ds));
  CHECK(pgd_batch(net, ds.inputs, ds.labels, cfg, Rng(1)) == ds.inputs);
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("robust accuracy is monotone non-increasing in restarts") {
  const MlpNetwork net = moons_net(10);
  const Dataset ds = two_moons(300, 0.1, 11);
  AttackConfig cfg;
  cfg.delta = 0.15;
  cfg.steps = 5;
  double prev = 1.0;
  for (std::size_t r : {1, 2, 5}) {
    cfg.restarts = r;
    const double acc = eval_robust_accuracy(net, ds, cfg, 12);
    CHECK(acc <= prev);
    CHECK(acc >= 0.0);
    CHECK(acc <= clean_accuracy(net, ds));
    prev = acc;
  }
}

TEST_CASE("10-step PGD increases CE over the clean point on at least 99% of 500 points") {
  const MlpNetwork net = moons_net(13);
  const Dataset ds = two_moons(500, 0.1, 14);
  AttackConfig cfg;
  cfg.delta = 0.05;
  cfg.steps = 10;
  const Matrix xa = pgd_batch(net, ds.inputs, ds.labels, cfg, Rng(15));
  std::size_t ok = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    ok += cross_entropy(logits(net, xa.row(i)), ds.labels[i]) >= cross_entropy(logits(net, ds.inputs.row(i)), ds.labels[i]);
  CHECK(ok >= 495);
}

TEST_CASE("PGD is deterministic given the rng") {
  const MlpNetwork net = moons_net(16);
  const Dataset ds = two_moons(50, 0.1, 17);
  AttackConfig cfg;
  cfg.restarts = 3;
  CHECK(pgd_batch(net, ds.inputs, ds.labels, cfg, Rng(4)) == pgd_batch(net, ds.inputs, ds.labels, cfg, Rng(4)));
}

TEST_CASE("norm and inner-loss parsing") {
  CHECK(parse_norm("linf") == Norm::Linf);
  CHECK(parse_norm("l2") == Norm::L2);
  CHECK(to_string(Norm::L2) == "l2");
  CHECK_THROWS(parse_norm("l1"));
  CHECK(parse_inner_loss("kl") == InnerLoss::KL);
  CHECK_THROWS(parse_inner_loss("hinge"));
  AttackConfig cfg;
  cfg.delta = 0.1;
  cfg.steps = 4;
  CHECK(cfg.effective_step_size() == doctest::Approx(0.0625));
}
