#include <cmath>
#include <numbers>

#include "doctest.h"
#include "trhreg/trainer.hpp"

using namespace trh;

namespace {

TrainInputs small_inputs(std::size_t epochs) {
  TrainInputs in;
  in.attack.delta = 0.05;
  in.attack.steps = 1;
  in.attack.step_size = 0.05;
  in.attack.random_start = false;
  in.eval_attack = in.attack;
  in.eval_attack.steps = 3;
  in.eval_attack.step_size = 0.02;
  in.train.epochs = epochs;
  in.train.lr_decay = LrDecay::Constant;
  in.train.seed = 3;
  return in;
}

MlpNetwork small_net(std::uint64_t seed, std::size_t width = 8) {
  Rng rng(seed, 0x6d6f64656c);
  return MlpNetwork::random({2, width, width, 2}, true, rng);
}

}  // namespace

TEST_CASE("lambda schedule points") {
  CHECK(lambda_at(LambdaSchedule::Multistep, 5, 100, 1.0) == doctest::Approx(0.01));
  CHECK(lambda_at(LambdaSchedule::Multistep, 30, 100, 1.0) == doctest::Approx(0.1));
  CHECK(lambda_at(LambdaSchedule::Multistep, 80, 100, 1.0) == doctest::Approx(1.0));
  CHECK(lambda_at(LambdaSchedule::Linear, 0, 100, 2.0) == 0.0);
  CHECK(lambda_at(LambdaSchedule::Linear, 99, 100, 2.0) == doctest::Approx(2.0));
  for (std::size_t t : {0, 17, 99}) CHECK(lambda_at(LambdaSchedule::Constant, t, 100, 0.3) == 0.3);
}

TEST_CASE("learning-rate schedule points") {
  TrainConfig cfg;
  cfg.base_lr = 0.2;
  cfg.warmup_iters = 10;
  cfg.lr_decay = LrDecay::Cosine;
  CHECK(lr_at(cfg, 0, 111) == 0.0);
  CHECK(lr_at(cfg, 5, 111) == doctest::Approx(0.1));
  CHECK(lr_at(cfg, 10, 111) == doctest::Approx(0.2));
  CHECK(lr_at(cfg, 60, 111) == doctest::Approx(0.1));  // midpoint of 101 cosine iterations
  CHECK(lr_at(cfg, 110, 111) == doctest::Approx(0.0));
  cfg.warmup_iters = 0;
  cfg.lr_decay = LrDecay::Multistep;
  CHECK(lr_at(cfg, 49, 100) == doctest::Approx(0.2));
  CHECK(lr_at(cfg, 50, 100) == doctest::Approx(0.02));
  CHECK(lr_at(cfg, 80, 100) == doctest::Approx(0.002));
  cfg.lr_decay = LrDecay::Constant;
  CHECK(lr_at(cfg, 99, 100) == 0.2);
}

TEST_CASE("swa_update examples") {
  Vector avg{0.0};
  swa_update(avg, Vector{1.0}, 0.995);
  CHECK(avg[0] == doctest::Approx(0.005));
  Vector a2{3.0, -1.0};
  swa_update(a2, Vector{0.5, 0.25}, 0.0);
  CHECK(a2 == Vector{0.5, 0.25});
  Vector a3{0.0};
  for (int i = 0; i < 2000; ++i) swa_update(a3, Vector{2.0}, 0.99);
  CHECK(a3[0] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("awp_step projects every layer onto its relative ball and ascends") {
  std::size_t ascended = 0, total = 0;
  for (std::uint64_t s = 0; s < 40; ++s) {
    Rng rng(s);
    const MlpNetwork net = MlpNetwork::random({3, 6, 5, 3}, true, rng);
    Matrix x(4, 3);
    for (double& v : x.data()) v = rng.normal();
    const std::vector<std::size_t> y{0, 1, 2, 0};
    ObjectiveSpec spec;
    const double delta = 0.005;
    const Vector xi = awp_step(net, x, x, y, spec, delta);
    for (std::size_t l = 0; l < net.depth(); ++l) {
      const ParameterBlock b = weight_block(net, l);
      const double xn = norm2(std::span<const double>(xi.data() + b.offset, b.count));
      const double wn = norm2(net.layer(l).weights.data());
      CHECK(xn <= delta * wn * (1.0 + 1e-12));
      const ParameterBlock bb = bias_block(net, l);
      for (std::size_t i = 0; i < bb.count; ++i) CHECK(xi[bb.offset + i] == 0.0);
    }
    const auto loss = [&](const MlpNetwork& n) {
      ad::Tape t;
      return algorithm1_loss(t, bind(t, n, false), x, x, y, spec).scalar();
    };
    Vector shifted = flatten_weights(net);
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += xi[i];
    ascended += loss(unflatten_weights(net, shifted)) >= loss(net);
    ++total;
    const Vector tiny = awp_step(net, x, x, y, spec, 1e-12);
    CHECK(norm2(tiny) <= 1e-10);
  }
  CHECK(ascended >= total * 95 / 100);
}

TEST_CASE("lambda = 0, gamma = 0 training is bitwise identical to a bare AT loop") {
  const Dataset ds = two_moons(40, 0.1, 1);
  TrainInputs in = small_inputs(5);
  const TrainResult r = train(small_net(2), ds, in);
  REQUIRE_FALSE(r.diverged);

  // Bare loop: full-batch momentum SGD on mean CE at single-step PGD points.
  MlpNetwork net = small_net(2);
  Vector theta = flatten_weights(net), vel(theta.size(), 0.0);
  const Rng attack_rng(in.train.seed, 2);
  for (std::size_t t = 0; t < 5; ++t) {
    const Matrix xa = pgd_batch(net, ds.inputs, ds.labels, in.attack, attack_rng.derive(t));
    const Vector g = backprop(net, [&](ad::Tape& tape, const TapeNetwork& tn) {
                       return ad::mean(tape::cross_entropy(tape_forward(tn, tape.constant(xa)).logits,
                                                           one_hot(ds.labels, 2)));
                     }).gradient;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      vel[i] = in.train.momentum * vel[i] + g[i];
      theta[i] -= in.train.base_lr * vel[i];
    }
    net = unflatten_weights(net, theta);
  }
  CHECK(flatten_weights(r.net) == theta);
}

TEST_CASE("training is deterministic given the seed") {
  const Dataset ds = two_moons(64, 0.1, 4);
  TrainInputs in = small_inputs(4);
  in.train.batch_size = 16;
  in.trh.lambda = 0.1;
  in.attack.random_start = true;
  in.measure.every = 2;
  in.measure.full = true;
  in.measure.layers = true;
  in.measure.spectrum = true;
  in.measure.probes = 4;
  const TrainResult a = train(small_net(5), ds, in), b = train(small_net(5), ds, in);
  CHECK(a.log.metrics_csv() == b.log.metrics_csv());
  CHECK(a.log.trace_csv(3) == b.log.trace_csv(3));
  CHECK(a.log.spectrum_csv() == b.log.spectrum_csv());
  CHECK(flatten_weights(a.net) == flatten_weights(b.net));
  in.train.seed = 6;
  const TrainResult c = train(small_net(5), ds, in);
  CHECK(a.log.metrics_csv() != c.log.metrics_csv());
}

TEST_CASE("CSV layout: meta line, headers and empty unmeasured columns") {
  const Dataset ds = two_moons(32, 0.1, 7);
  TrainInputs in = small_inputs(3);
  in.kind = RobustLossKind::trades(6.0);
  in.measure.every = 1;
  const TrainResult r = train(small_net(8), ds, in);
  const std::string m = r.log.metrics_csv();
  CHECK(m.rfind("# loss=trades penalty=6 lambda_t=6 ", 0) == 0);
  CHECK(m.find("\nepoch,train_loss,clean_acc,robust_acc,lambda_eff,lr\n") != std::string::npos);
  const std::string t = r.log.trace_csv(3);
  CHECK(t.find("epoch,trh_top_analytic,trh_full_estimate,trh_full_stderr,trh_layer_1,trh_layer_2,trh_layer_3,"
               "train_loss,robust_acc\n") != std::string::npos);
  CHECK(t.find("\n1,") != std::string::npos);
  const std::size_t row = t.find("\n1,");
  const std::string line = t.substr(row + 1, t.find('\n', row + 1) - row - 1);
  CHECK(line.find(",,,") != std::string::npos);
  CHECK(r.log.rows.size() == 3);
  CHECK(r.log.rows[0].trace.has_value());
}

TEST_CASE("Hutchinson full-trace measurement is within 3 SE of the exact trace") {
  const Dataset ds = two_moons(20, 0.1, 9);
  Rng rng(10);
  MlpNetwork net = MlpNetwork::random({2, 6, 5, 2}, true, rng);
  for (std::size_t l = 0; l + 1 < net.depth(); ++l)
    for (double& b : *net.bias(l)) b = 0.3 * rng.normal();
  AttackConfig attack;
  attack.delta = 0.02;
  attack.steps = 2;
  attack.random_start = false;
  MeasureConfig mc;
  mc.full = true;
  mc.layers = true;
  mc.probes = 200;
  const TraceMeasurement m = measure_trace(net, ds, RobustLossKind::at(), attack, mc, 11);
  REQUIRE(m.full_measured);

  const Matrix xa = pgd_batch(net, ds.inputs, ds.labels, attack, Rng(0));
  for (std::size_t i = 0; i < ds.size(); ++i) REQUIRE(min_abs_preactivation(net, xa.row(i)) > 1e-3);
  const GradientFunction grad = [&](std::span<const double> th) {
    return backprop(unflatten_weights(net, th), [&](ad::Tape& t, const TapeNetwork& tn) {
             return ad::mean(tape::cross_entropy(tape_forward(tn, t.constant(xa)).logits, one_hot(ds.labels, 2)));
           })
        .gradient;
  };
  const auto idx = weight_indices(net);
  const double exact = exact_trace(grad, flatten_weights(net), idx);
  CHECK(m.trh_full_stderr > 0.0);
  CHECK(std::abs(m.trh_full_estimate - exact) <= 3.0 * m.trh_full_stderr);
  double layers = 0.0;
  for (double v : m.trh_layers) layers += v;
  CHECK(layers == doctest::Approx(exact).epsilon(1e-5));
}

TEST_CASE("divergence keeps the last good weights") {
  const Dataset ds = two_moons(32, 0.1, 12);
  TrainInputs in = small_inputs(50);
  in.train.base_lr = 1e6;
  const TrainResult r = train(small_net(13), ds, in);
  CHECK(r.diverged);
  CHECK(r.diverged_iteration >= 0);
  CHECK_FALSE(r.divergence_message.empty());
  for (double v : flatten_weights(r.net)) CHECK(std::isfinite(v));
}

TEST_CASE("SWA run evaluates the averaged weights") {
  const Dataset ds = two_moons(32, 0.1, 14);
  TrainInputs in = small_inputs(3);
  in.train.baseline = Baseline::SWA;
  in.train.swa_alpha = 0.5;
  const TrainResult r = train(small_net(15), ds, in);
  CHECK(flatten_weights(r.eval_net) != flatten_weights(r.net));
  in.train.swa_alpha = 0.0;
  const TrainResult r0 = train(small_net(15), ds, in);
  CHECK(flatten_weights(r0.eval_net) == flatten_weights(r0.net));
}

TEST_CASE("AWP run trains and stays finite") {
  const Dataset ds = two_moons(32, 0.1, 16);
  TrainInputs in = small_inputs(3);
  in.train.baseline = Baseline::AWP;
  const TrainResult r = train(small_net(17), ds, in);
  CHECK_FALSE(r.diverged);
  CHECK(flatten_weights(r.net) != flatten_weights(small_net(17)));
}

TEST_CASE("a small Two Moons net reaches high clean accuracy") {
  const Dataset ds = two_moons(200, 0.1, 18);
  TrainInputs in = small_inputs(200);
  in.attack.delta = 0.02;
  in.attack.step_size = 0.02;
  const TrainResult r = train(small_net(19, 32), ds, in);
  REQUIRE_FALSE(r.diverged);
  CHECK(r.log.rows.back().clean_acc > 0.95);
}

TEST_CASE("config validation and parsing") {
  CHECK(parse_lr_decay("cosine") == LrDecay::Cosine);
  CHECK(parse_baseline("awp") == Baseline::AWP);
  CHECK(to_string(Baseline::SWA) == "swa");
  CHECK_THROWS(parse_lr_decay("step"));
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c.epochs = 1;
  c.baseline = Baseline::SWA;
  c.swa_alpha = 1.5;
  CHECK_THROWS(c.validate());
}
