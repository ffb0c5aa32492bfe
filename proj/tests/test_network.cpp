#include <cmath>
#include <sstream>

#include "doctest.h"
#include "trhreg/losses.hpp"
#include "trhreg/network.hpp"
#include "trhreg/trh.hpp"

using namespace trh;

namespace {

MlpNetwork random_net(const std::vector<std::size_t>& dims, std::uint64_t seed, bool bias = true) {
  Rng rng(seed);
  MlpNetwork net = MlpNetwork::random(dims, bias, rng);
  if (bias)
    for (std::size_t l = 0; l + 1 < net.depth(); ++l)
      for (double& b : *net.bias(l)) b = 0.2 * rng.normal();
  return net;
}

}  // namespace

TEST_CASE("constructor validates the architecture") {
  DenseLayer a{Matrix(2, 3), Vector(3, 0.0)};
  DenseLayer top{Matrix(3, 2), std::nullopt};
  CHECK_NOTHROW(MlpNetwork({a, top}));
  CHECK_THROWS(MlpNetwork({a, DenseLayer{Matrix(4, 2), std::nullopt}}));
  CHECK_THROWS(MlpNetwork({a, DenseLayer{Matrix(3, 2), Vector(2, 0.0)}}));
  CHECK_THROWS(MlpNetwork({a, DenseLayer{Matrix(3, 1), std::nullopt}}));
}

TEST_CASE("forward: identity top layer and zero input") {
  MlpNetwork id({DenseLayer{Matrix::identity(2), std::nullopt}});
  const ForwardTrace t = forward(id, Vector{1.0, 2.0});
  CHECK(t.logits == Vector{1.0, 2.0});
  const MlpNetwork net = random_net({3, 5, 4}, 1, false);
  for (double g : logits(net, Vector(3, 0.0))) CHECK(g == 0.0);
  CHECK_THROWS(forward(net, Vector(2, 0.0)));
}

TEST_CASE("forward matches a hand evaluation on a 2-3-2 net") {
  DenseLayer l0{Matrix::from_rows({{1.0, -1.0, 0.5}, {2.0, 0.0, -1.0}}), Vector{0.1, 0.2, -0.3}};
  DenseLayer l1{Matrix::from_rows({{1.0, 0.0}, {-1.0, 2.0}, {0.5, 0.5}}), std::nullopt};
  const MlpNetwork net({l0, l1});
  const Vector x{1.0, 0.5};
  // pre = [1+1+0.1, -1+0+0.2, 0.5-0.5-0.3] = [2.1, -0.8, -0.3]; relu = [2.1, 0, 0]
  const ForwardTrace t = forward(net, x);
  CHECK(t.preact[0][0] == doctest::Approx(2.1));
  CHECK(t.preact[0][1] == doctest::Approx(-0.8));
  CHECK(t.preact[0][2] == doctest::Approx(-0.3));
  CHECK(t.features() == Vector{t.preact[0][0], 0.0, 0.0});
  CHECK(t.logits[0] == doctest::Approx(2.1));
  CHECK(t.logits[1] == doctest::Approx(0.0));
  CHECK(min_abs_preactivation(net, x) == doctest::Approx(0.3));
}

TEST_CASE("bias-free nets are positively homogeneous in x") {
  const MlpNetwork net = random_net({4, 6, 6, 3}, 2, false);
  Rng rng(3);
  const Vector x = normal_vector(4, rng);
  Vector cx = x;
  for (double& v : cx) v *= 2.5;
  const Vector a = logits(net, x), b = logits(net, cx);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == doctest::Approx(2.5 * a[k]).epsilon(1e-12));
}

TEST_CASE("backprop: CE on a linear softmax model gives z (s - y)^T") {
  Rng rng(4);
  MlpNetwork net({DenseLayer{Matrix(3, 4), std::nullopt}});
  for (double& v : net.weights(0).data()) v = rng.normal();
  const Matrix x = Matrix::from_rows({{0.3, -1.2, 0.7}});
  const std::vector<std::size_t> y{2};
  const GradientResult g = backprop(net, [&](ad::Tape& t, const TapeNetwork& tn) {
    return ad::mean(tape::cross_entropy(tape_forward(tn, t.constant(x)).logits, one_hot(y, 4)));
  });
  const Vector s = softmax(logits(net, x.row(0)));
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t k = 0; k < 4; ++k)
      CHECK(g.gradient[d * 4 + k] == doctest::Approx(x(0, d) * (s[k] - (k == 2 ? 1.0 : 0.0))).epsilon(1e-12));
  CHECK(g.loss == doctest::Approx(cross_entropy(logits(net, x.row(0)), 2)));
}

TEST_CASE("backprop: constant objective has zero gradient") {
  const MlpNetwork net = random_net({2, 3, 2}, 5);
  const GradientResult g = backprop(net, [](ad::Tape& t, const TapeNetwork&) { return t.scalar(3.0); });
  for (double v : g.gradient) CHECK(v == 0.0);
}

TEST_CASE("backprop: AT + TrH objective on a 2-4-3 net matches finite differences") {
  const MlpNetwork net = random_net({2, 4, 3}, 6);
  const Matrix x = Matrix::from_rows({{0.4, -0.9}, {1.1, 0.3}});
  Matrix xa = x;
  xa(0, 0) += 0.05;
  xa(1, 1) -= 0.05;
  REQUIRE(is_smooth(net, x.row(0)));
  REQUIRE(is_smooth(net, x.row(1)));
  REQUIRE(is_smooth(net, xa.row(0)));
  REQUIRE(is_smooth(net, xa.row(1)));
  const std::vector<std::size_t> y{0, 2};
  ObjectiveSpec spec;
  spec.lambda = 0.7;
  const TapeObjective obj = [&](ad::Tape& t, const TapeNetwork& tn) {
    return algorithm1_loss(t, tn, x, xa, y, spec);
  };
  const Vector g = backprop(net, obj).gradient;
  const Vector fd = finite_diff_gradient(
      [&](std::span<const double> th) { return evaluate(unflatten_weights(net, th), obj); }, flatten_weights(net));
  CHECK(relative_error(g, fd) <= 1e-6);
}

TEST_CASE("backprop raises TrainingDiverged on a non-finite objective") {
  const MlpNetwork net = random_net({2, 2}, 7);
  CHECK_THROWS_AS(backprop(net, [](ad::Tape& t, const TapeNetwork&) { return ad::log(t.scalar(-1.0)); }),
                  TrainingDiverged);
}

TEST_CASE("flatten/unflatten round trips bit-exactly") {
  const MlpNetwork net = random_net({3, 5, 4, 2}, 8);
  const Vector th = flatten_weights(net);
  CHECK(th.size() == net.parameter_count());
  const MlpNetwork back = unflatten_weights(net, th);
  CHECK(flatten_weights(back) == th);
  Rng rng(9);
  const Vector v = normal_vector(th.size(), rng);
  CHECK(flatten_weights(unflatten_weights(net, v)) == v);
  CHECK_THROWS(unflatten_weights(net, Vector(th.size() + 1)));
  // Documented order: layer 0 weights row-major, then its bias.
  CHECK(th[1] == net.layer(0).weights(0, 1));
  CHECK(th[15] == (*net.layer(0).bias)[0]);
  CHECK(weight_block(net, 1).offset == 20);
}

TEST_CASE("Example-1 architecture has 10,600 parameters") {
  const MlpNetwork net = random_net({2, 100, 100, 2}, 10);
  CHECK(net.parameter_count() == 10600);
  CHECK(weight_indices(net).size() == 10400);
}

TEST_CASE("random init: zero biases and variance 1/d_in") {
  Rng rng(11);
  const MlpNetwork net = MlpNetwork::random({400, 300, 2}, true, rng);
  for (double b : *net.layer(0).bias) CHECK(b == 0.0);
  double s2 = 0.0;
  for (double w : net.layer(0).weights.data()) s2 += w * w;
  CHECK(s2 / (400.0 * 300.0) == doctest::Approx(1.0 / 400.0).epsilon(0.02));
}

TEST_CASE("TRHNET v1 checkpoints round trip exactly") {
  const MlpNetwork net = random_net({3, 4, 2}, 12);
  std::stringstream ss;
  write_checkpoint(ss, net);
  const std::string text = ss.str();
  CHECK(text.rfind("TRHNET v1 2\n", 0) == 0);
  CHECK(text.find("layer 0 3 4 1\n") != std::string::npos);
  CHECK(text.find("layer 1 4 2 0\n") != std::string::npos);
  const MlpNetwork back = read_checkpoint(ss);
  CHECK(flatten_weights(back) == flatten_weights(net));
  std::stringstream bad("TRHNET v2 1\n");
  CHECK_THROWS(read_checkpoint(bad));
  std::stringstream truncated("TRHNET v1 1\nlayer 0 2 2 0\n1 2\n");
  CHECK_THROWS(read_checkpoint(truncated));
}

TEST_CASE("tape forward agrees with the plain forward pass") {
  const MlpNetwork net = random_net({3, 5, 5, 4}, 13);
  Rng rng(14);
  Matrix x(3, 3);
  for (double& v : x.data()) v = rng.normal();
  ad::Tape t;
  const TapeForward f = tape_forward(bind(t, net, false), t.constant(x));
  for (std::size_t r = 0; r < 3; ++r) {
    const ForwardTrace p = forward(net, x.row(r));
    for (std::size_t k = 0; k < 4; ++k) CHECK(f.logits.value()(r, k) == p.logits[k]);
  }
}
