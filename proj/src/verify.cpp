#include "trhreg/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "json.hpp"
#include "trhreg/hessian_oracle.hpp"
#include "trhreg/losses.hpp"
#include "trhreg/pacbayes.hpp"
#include "trhreg/theorem4.hpp"
#include "trhreg/trh.hpp"

namespace trh {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Accumulates per-instance errors into one property row.
struct Tally {
  PropertyResult r;
  Tally(std::string group, std::string property, double tol) {
    r.group = std::move(group);
    r.property = std::move(property);
    r.tolerance = tol;
  }
  void add(double err, std::uint64_t seed) {
    ++r.instances;
    if (!(err <= r.tolerance)) {
      r.passed = false;
      r.failing_seeds.push_back(seed);
    }
    if (!(err <= r.worst)) r.worst = err;
  }
  void fail(std::uint64_t seed, const std::string& why) {
    ++r.instances;
    r.passed = false;
    r.failing_seeds.push_back(seed);
    if (r.detail.empty()) r.detail = why;
  }
};

double min_kappa_gap(const Vector& s, std::size_t y) {
  double a = -1.0, b = -1.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k == y) continue;
    if (s[k] > a) {
      b = a;
      a = s[k];
    } else if (s[k] > b) {
      b = s[k];
    }
  }
  return b < 0.0 ? 1.0 : a - b;
}

/// Second derivative along coordinate i by Richardson-extrapolated central
/// differences.
double second_difference(const ScalarFunction& f, Vector& w, std::size_t i, double f0, double h) {
  auto d2 = [&](double step) {
    const double orig = w[i];
    w[i] = orig + step;
    const double fp = f(w);
    w[i] = orig - step;
    const double fm = f(w);
    w[i] = orig;
    return (fp - 2.0 * f0 + fm) / (step * step);
  };
  return (4.0 * d2(0.5 * h) - d2(h)) / 3.0;
}

double oracle_trace(const ScalarFunction& f, Vector w, double h = 1e-3) {
  const double f0 = f(w);
  double tr = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) tr += second_difference(f, w, i, f0, h);
  return tr;
}

Vector softmax_h(const Vector& logits) {
  Vector s = softmax(logits);
  for (double& v : s) v -= v * v;
  return s;
}

bool is_mutated(const SuiteOptions& o, const char* name) { return o.mutate && *o.mutate == name; }

}  // namespace

const std::vector<std::string>& mutation_names() {
  static const std::vector<std::string> names{"trh_at",  "trh_trades", "trh_trades_full",
                                              "trh_alp", "trh_mart",   "trh_ce_layer"};
  return names;
}

VerifyInstance random_instance(std::uint64_t seed, const InstanceLimits& lim) {
  Rng rng(seed, 0x696e7374ULL);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const std::size_t d_in = 1 + rng.uniform_index(lim.max_input);
    const std::size_t layers = 1 + rng.uniform_index(lim.max_layers);
    const std::size_t k = 2 + rng.uniform_index(lim.max_classes - 1);
    std::vector<std::size_t> dims{d_in};
    for (std::size_t l = 0; l + 1 < layers; ++l) dims.push_back(2 + rng.uniform_index(lim.max_hidden - 1));
    dims.push_back(k);
    MlpNetwork net = MlpNetwork::random(dims, true, rng);
    for (std::size_t l = 0; l + 1 < net.depth(); ++l)
      for (double& b : *net.bias(l)) b = 0.3 * rng.normal();

    VerifyInstance inst{net, Matrix(lim.rows, d_in), Matrix(lim.rows, d_in), {}, seed};
    bool ok = true;
    for (std::size_t r = 0; r < lim.rows && ok; ++r) {
      bool row_ok = false;
      for (int tries = 0; tries < 200 && !row_ok; ++tries) {
        for (std::size_t j = 0; j < d_in; ++j) {
          inst.x(r, j) = rng.normal();
          inst.x_adv(r, j) = inst.x(r, j) + 0.6 * (rng.uniform() - 0.5);
        }
        const std::size_t y = rng.uniform_index(k);
        row_ok = min_abs_preactivation(net, inst.x.row(r)) >= lim.margin &&
                 min_abs_preactivation(net, inst.x_adv.row(r)) >= lim.margin &&
                 min_kappa_gap(softmax(logits(net, inst.x_adv.row(r))), y) >= lim.kappa_gap;
        if (row_ok) inst.labels.push_back(y);
      }
      ok = row_ok;
    }
    if (ok) return inst;
  }
  throw std::runtime_error("random_instance: no smooth instance found for seed " + std::to_string(seed));
}

std::vector<PropertyResult> verify_trh_formulas(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  const double tol = 1e-5;
  Tally at("trh_formulas", "at", tol), tr1("trh_formulas", "trades_stop_grad", tol),
      tr2("trh_formulas", "trades_full_gradient", tol), alp("trh_formulas", "alp", tol),
      mart("trh_formulas", "mart", tol);

  for (std::size_t n = 0; n < o.instances; ++n) {
    const std::uint64_t seed = o.seed + n;
    const VerifyInstance inst = random_instance(seed);
    const ForwardTrace clean = forward(inst.net, inst.x.row(0));
    const ForwardTrace adv = forward(inst.net, inst.x_adv.row(0));
    const std::size_t y = inst.labels[0];
    const Vector z = clean.features(), zp = adv.features();
    const std::size_t K = inst.net.num_classes(), D = z.size();
    const Vector w0 = inst.net.layer(inst.net.depth() - 1).weights.storage();
    Rng prng(seed, 0x70656eULL);
    const double lt = 0.5 + 5.0 * prng.uniform();
    const double la = 0.5 + 5.0 * prng.uniform();
    const double lm = 0.5 + 5.0 * prng.uniform();

    auto top_logits = [&](std::span<const double> w, const Vector& f) {
      Vector g(K, 0.0);
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t k = 0; k < K; ++k) g[k] += w[d * K + k] * f[d];
      return g;
    };
    // Frozen pieces evaluated at the base weights.
    const Vector p_clean = softmax(clean.logits);
    const std::size_t kappa = kappa_star(softmax(adv.logits), y);
    const double not_y = 1.0 - p_clean[y];
    auto frozen_kl = [&](const Vector& gq) {
      const Vector lq = log_softmax(gq);
      double kl = 0.0;
      for (std::size_t k = 0; k < K; ++k) kl += p_clean[k] * (std::log(p_clean[k]) - lq[k]);
      return kl;
    };

    const ScalarFunction f_at = [&](std::span<const double> w) { return cross_entropy(top_logits(w, zp), y); };
    const ScalarFunction f_tr1 = [&](std::span<const double> w) {
      return cross_entropy(top_logits(w, z), y) + lt * frozen_kl(top_logits(w, zp));
    };
    const ScalarFunction f_tr2 = [&](std::span<const double> w) {
      return cross_entropy(top_logits(w, z), y) + lt * kl_div_logits(top_logits(w, z), top_logits(w, zp));
    };
    const ScalarFunction f_alp = [&](std::span<const double> w) {
      return cross_entropy(top_logits(w, zp), y) + la * alp_pair_loss(p_clean, softmax(top_logits(w, zp)));
    };
    const ScalarFunction f_mart = [&](std::span<const double> w) {
      const Vector sp = softmax(top_logits(w, zp));
      double rest = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        if (k != kappa) rest += sp[k];
      return cross_entropy(top_logits(w, z), y) - std::log(rest) + lm * not_y * frozen_kl(top_logits(w, zp));
    };

    const Vector h = softmax_h(clean.logits), hp = softmax_h(adv.logits);
    const double zz = squared_norm(z), zpzp = squared_norm(zp);

    double v_at = trh_at(adv);
    if (is_mutated(o, "trh_at")) v_at -= 2.0 * zpzp * hp[0];
    double v_tr1 = trh_trades(clean, adv, lt);
    if (is_mutated(o, "trh_trades")) v_tr1 -= 2.0 * lt * zpzp * sum(hp);
    auto [v_tr2, terms] = trh_trades_full(clean, adv, lt);
    if (is_mutated(o, "trh_trades_full")) v_tr2 -= 2.0 * lt * terms.g_term;
    double v_alp = trh_alp(clean, adv, la);
    if (is_mutated(o, "trh_alp")) v_alp -= 2.0 * (v_alp - trh_at(adv));
    double v_mart = trh_mart(clean, adv, y, lm);
    if (is_mutated(o, "trh_mart")) v_mart -= 2.0 * zz * sum(h);

    at.add(relative_error(v_at, oracle_trace(f_at, w0)), seed);
    tr1.add(relative_error(v_tr1, oracle_trace(f_tr1, w0)), seed);
    tr2.add(relative_error(v_tr2, oracle_trace(f_tr2, w0)), seed);
    alp.add(relative_error(v_alp, oracle_trace(f_alp, w0)), seed);
    mart.add(relative_error(v_mart, oracle_trace(f_mart, w0)), seed);
  }
  std::vector<PropertyResult> out{at.r, tr1.r, tr2.r, alp.r, mart.r};
  for (auto& r : out) r.seconds = seconds_since(t0);
  return out;
}

std::vector<PropertyResult> verify_theorem4(const SuiteOptions& o, std::size_t inequality_instances) {
  auto t0 = Clock::now();
  Tally layer("theorem4", "layer_trace", 1e-5);
  Tally logit("theorem4", "diagonal_form_at_logits", 1e-12);
  for (std::size_t n = 0; n < o.instances; ++n) {
    const std::uint64_t seed = o.seed + n;
    const VerifyInstance inst = random_instance(seed);
    const std::span<const double> x = inst.x.row(0);
    const std::size_t y = inst.labels[0];
    const std::size_t L = inst.net.depth();
    double worst = 0.0;
    for (std::size_t level = 2; level <= L + 1; ++level) {
      const std::size_t l = level - 2;
      const ScalarFunction f = [&](std::span<const double> w) {
        MlpNetwork net = inst.net;
        std::copy(w.begin(), w.end(), net.weights(l).data().begin());
        return cross_entropy(logits(net, x), y);
      };
      double analytic = trh_ce_layer(inst.net, x, level);
      if (is_mutated(o, "trh_ce_layer")) analytic = -analytic;
      worst = std::max(worst, relative_error(analytic, oracle_trace(f, inst.net.layer(l).weights.storage())));
    }
    layer.add(worst, seed);
    logit.add(relative_error(trh_ce_layer_diagonal(inst.net, x, L + 1), trh_ce_layer(inst.net, x, L + 1)), seed);
  }
  layer.r.seconds = logit.r.seconds = seconds_since(t0);

  t0 = Clock::now();
  Tally ineq("theorem4", "layer_inequality", 0.0);
  for (std::size_t n = 0; n < inequality_instances; ++n) {
    const std::uint64_t seed = o.seed + 100000 + n;
    const VerifyInstance inst = random_instance(seed);
    double excess = 0.0;
    for (std::size_t level = 1; level <= inst.net.depth(); ++level) {
      const LayerInequality q = check_layer_inequality(inst.net, inst.x.row(0), level, 1e-9);
      if (!q.holds) excess = std::max(excess, q.lhs - q.rhs);
    }
    ineq.add(excess, seed);
  }
  ineq.r.seconds = seconds_since(t0);
  return {layer.r, logit.r, ineq.r};
}

std::vector<PropertyResult> verify_gradients(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  struct Arm {
    const char* name;
    RobustLossKind kind;
    bool stop_grad;
    TrHScope scope;
  };
  const std::vector<Arm> arms{{"at", RobustLossKind::at(), true, TrHScope::Top},
                              {"at_full_scope", RobustLossKind::at(), true, TrHScope::Full},
                              {"trades_stop_grad", RobustLossKind::trades(2.0), true, TrHScope::Top},
                              {"trades_full_gradient", RobustLossKind::trades(2.0), false, TrHScope::Top},
                              {"alp", RobustLossKind::alp(1.5), true, TrHScope::Top},
                              {"mart", RobustLossKind::mart(3.0), true, TrHScope::Top}};
  std::vector<Tally> tallies;
  for (const Arm& a : arms) tallies.emplace_back("gradients", a.name, 1e-6);
  InstanceLimits lim;
  lim.rows = 3;
  for (std::size_t n = 0; n < o.instances; ++n) {
    const std::uint64_t seed = o.seed + 200000 + n;
    const VerifyInstance inst = random_instance(seed, lim);
    const Vector theta = flatten_weights(inst.net);
    for (std::size_t a = 0; a < arms.size(); ++a) {
      ObjectiveSpec spec;
      spec.kind = arms[a].kind;
      spec.trh.stop_grad_clean = arms[a].stop_grad;
      spec.trh.scope = arms[a].scope;
      spec.lambda = 0.3;
      spec.trh.lambda = 0.3;
      spec.gamma = 0.01;
      const TapeObjective obj = [&](ad::Tape& t, const TapeNetwork& tn) {
        return algorithm1_loss(t, tn, inst.x, inst.x_adv, inst.labels, spec);
      };
      const Vector g = backprop(inst.net, obj).gradient;
      const Vector fd = finite_diff_gradient(
          [&](std::span<const double> th) { return evaluate(unflatten_weights(inst.net, th), obj); }, theta);
      tallies[a].add(relative_error(g, fd), seed);
    }
  }
  std::vector<PropertyResult> out;
  for (auto& t : tallies) {
    t.r.seconds = seconds_since(t0);
    out.push_back(t.r);
  }
  return out;
}

std::vector<PropertyResult> verify_pacbayes(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  Tally nonneg("pacbayes", "kl_nonnegative", 0.0);
  Tally closed("pacbayes", "kl_matches_closed_form", 1e-10);
  Tally zero("pacbayes", "kl_zero_at_prior", 1e-15);
  Tally case1("pacbayes", "case1_beats_grid", 1e-9);
  Tally case2("pacbayes", "case2_beats_grid", 1e-9);
  Tally regime("pacbayes", "out_of_regime_reported", 0.0);
  Tally reparam("pacbayes", "surrogate_equals_objective", 1e-12);

  const std::size_t curvature_vectors = std::max<std::size_t>(20, o.instances);
  for (std::size_t n = 0; n < curvature_vectors; ++n) {
    const std::uint64_t seed = o.seed + 300000 + n;
    Rng rng(seed, 0x7062ULL);
    const std::size_t dim = 3 + rng.uniform_index(20);
    const double sigma0_sq = std::exp(-6.0 + 5.0 * rng.uniform());
    const double beta = std::exp(-1.0 + 6.0 * rng.uniform());

    // KL of a random diagonal posterior.
    Vector mean(dim), var(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      mean[i] = rng.normal();
      var[i] = sigma0_sq * std::exp(2.0 * rng.normal());
    }
    const GaussianPosterior q = GaussianPosterior::diag(mean, var);
    const double kl = gaussian_kl(q, sigma0_sq);
    nonneg.add(kl >= 0.0 ? 0.0 : -kl, seed);
    double ref = -static_cast<double>(dim) + squared_norm(mean) / sigma0_sq;
    for (double v : var) ref += std::log(sigma0_sq / v) + v / sigma0_sq;
    closed.add(relative_error(kl, 0.5 * ref), seed);
    zero.add(std::abs(gaussian_kl(GaussianPosterior::spherical(Vector(dim, 0.0), sigma0_sq), sigma0_sq)), seed);

    // Curvatures inside the regime, some negative.
    const double floor = -1.0 / (sigma0_sq * beta);
    Vector hdiag(dim);
    for (std::size_t i = 0; i < dim; ++i)
      hdiag[i] = rng.uniform() < 0.2 ? 0.9 * floor * rng.uniform() : std::exp(3.0 * rng.normal());
    const double theta_sq = squared_norm(mean);
    auto grid = [&](double lo, double hi, std::size_t i) { return lo * std::pow(hi / lo, i / 99.0); };
    const double lo = sigma0_sq * 1e-6, hi = sigma0_sq * 1e2;

    const double trace = sum(hdiag);
    double grid_min = INFINITY;
    for (std::size_t i = 0; i < 100; ++i)
      grid_min = std::min(grid_min, second_order_objective_spherical(grid(lo, hi, i), trace, theta_sq, dim,
                                                                     sigma0_sq, beta));
    if (1.0 + sigma0_sq * beta * trace / static_cast<double>(dim) > 0.0) {
      const double s = optimal_sigma_spherical(trace, sigma0_sq, beta, dim);
      const double a = second_order_objective_spherical(s, trace, theta_sq, dim, sigma0_sq, beta);
      case1.add(std::max(0.0, (a - grid_min) / std::max(1.0, std::abs(grid_min))), seed);
    }

    const Vector sd = optimal_sigma_diag(hdiag, sigma0_sq, beta);
    const double a2 = second_order_objective_diag(sd, hdiag, theta_sq, sigma0_sq, beta);
    // The objective is separable, so the grid minimum is per coordinate.
    double grid2 = 0.0;
    Vector probe = sd;
    for (std::size_t c = 0; c < dim; ++c) {
      double best = INFINITY;
      for (std::size_t i = 0; i < 100; ++i) {
        probe[c] = grid(lo, hi, i);
        best = std::min(best, second_order_objective_diag(probe, hdiag, theta_sq, sigma0_sq, beta) -
                                  second_order_objective_diag(sd, hdiag, theta_sq, sigma0_sq, beta));
      }
      probe[c] = sd[c];
      grid2 += best;
    }
    case2.add(std::max(0.0, -grid2 / std::max(1.0, std::abs(a2))), seed);

    Vector bad = hdiag;
    bad[dim / 2] = 2.0 * floor;
    try {
      optimal_sigma_diag(bad, sigma0_sq, beta);
      regime.fail(seed, "no OutOfRegime for a curvature below -1/(sigma0^2 beta)");
    } catch (const OutOfRegime& e) {
      regime.add(e.indices() == std::vector<std::size_t>{dim / 2} ? 0.0 : 1.0, seed);
    }
  }

  InstanceLimits lim;
  lim.rows = 4;
  for (std::size_t n = 0; n < o.instances; ++n) {
    const std::uint64_t seed = o.seed + 400000 + n;
    const VerifyInstance inst = random_instance(seed, lim);
    Rng rng(seed, 0x7270ULL);
    PacBayesConfig cfg;
    cfg.sigma0_sq = std::exp(-5.0 + 4.0 * rng.uniform());
    cfg.beta = std::exp(6.0 * rng.uniform());
    const RobustLossKind kinds[] = {RobustLossKind::at(), RobustLossKind::trades(6.0), RobustLossKind::alp(1.0),
                                    RobustLossKind::mart(5.0)};
    const RobustLossKind kind = kinds[n % 4];
    ObjectiveSpec spec;
    spec.kind = kind;
    spec.lambda = cfg.lambda();
    spec.trh.lambda = cfg.lambda();
    spec.gamma = cfg.gamma();
    const double objective = evaluate(inst.net, [&](ad::Tape& t, const TapeNetwork& tn) {
      return algorithm1_loss(t, tn, inst.x, inst.x_adv, inst.labels, spec);
    });
    double trh_mean = 0.0;
    for (std::size_t r = 0; r < inst.labels.size(); ++r)
      trh_mean += trh_top(kind, forward(inst.net, inst.x.row(r)), forward(inst.net, inst.x_adv.row(r)),
                          inst.labels[r]);
    trh_mean /= static_cast<double>(inst.labels.size());
    const double surrogate = bound_surrogate(inst.net, inst.x, inst.x_adv, inst.labels, kind, cfg, trh_mean);
    const PacBayesConfig back = PacBayesConfig::from_gamma_lambda(cfg.gamma(), cfg.lambda());
    const double err = std::max({std::abs(objective - surrogate) / std::max(1.0, std::abs(objective)),
                                 relative_error(back.sigma0_sq, cfg.sigma0_sq), relative_error(back.beta, cfg.beta)});
    reparam.add(err, seed);
  }
  std::vector<PropertyResult> out{nonneg.r, closed.r, zero.r, case1.r, case2.r, regime.r, reparam.r};
  for (auto& r : out) r.seconds = seconds_since(t0);
  return out;
}

std::vector<PropertyResult> verify_hutchinson(const SuiteOptions& o) {
  const auto t0 = Clock::now();
  Tally diag("hutchinson", "diagonal_exact_one_probe", 1e-12);
  Tally tr10("hutchinson", "trace10_within_3se", 3.0);
  Tally sq("hutchinson", "trace_sq_within_3se", 3.0);

  for (std::size_t n = 0; n < o.instances; ++n) {
    const std::uint64_t seed = o.seed + 500000 + n;
    Rng rng(seed, 0x6875ULL);
    const std::size_t dim = 1 + rng.uniform_index(30);
    Vector d(dim);
    for (double& v : d) v = 3.0 * rng.normal();
    const HessianVectorProduct hv = [&](std::span<const double> v) {
      Vector out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = d[i] * v[i];
      return out;
    };
    const TraceEstimate e = hutchinson_trace(quadratic_form_from_hvp(hv), dim, 1, rng);
    diag.add(std::abs(e.estimate - sum(d)) / std::max(1.0, std::abs(sum(d))), seed);
  }

  auto dense_hvp = [](const Matrix& a) {
    return HessianVectorProduct([a](std::span<const double> v) {
      Vector out(a.rows(), 0.0);
      for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a(i, j) * v[j];
      return out;
    });
  };
  auto random_symmetric = [](std::size_t n, Rng& rng) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) a(i, j) = a(j, i) = rng.normal();
    return a;
  };

  // One draw each: a 3-SE band is a statistical statement about a single run.
  {
    Rng rng(o.seed, 0x74313030ULL);
    Matrix a = random_symmetric(10, rng);
    double t = 0.0;
    for (std::size_t i = 0; i < 10; ++i) t += a(i, i);
    for (std::size_t i = 0; i < 10; ++i) a(i, i) += (10.0 - t) / 10.0;
    const TraceEstimate e = hutchinson_trace(quadratic_form_from_hvp(dense_hvp(a)), 10, 1000, rng);
    tr10.add(std::abs(e.estimate - 10.0) / e.standard_error, o.seed);
  }
  {
    Rng rng(o.seed, 0x73713636ULL);
    const Matrix a = random_symmetric(6, rng);
    double fro = 0.0;
    for (double v : a.data()) fro += v * v;
    const TraceEstimate e = hutchinson_trace_sq(dense_hvp(a), 6, 1000, rng);
    sq.add(std::abs(e.estimate - fro) / e.standard_error, o.seed);
  }
  std::vector<PropertyResult> out{diag.r, tr10.r, sq.r};
  for (auto& r : out) r.seconds = seconds_since(t0);
  return out;
}

VerifyLevel parse_verify_level(const std::string& s) {
  if (s == "quick") return VerifyLevel::Quick;
  if (s == "full") return VerifyLevel::Full;
  throw std::invalid_argument("unknown verify level '" + s + "' (expected quick|full)");
}

bool VerifyReport::passed() const {
  return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

std::string VerifyReport::to_json() const {
  nlohmann::json j;
  j["level"] = level;
  j["mutate"] = mutate ? nlohmann::json(*mutate) : nlohmann::json(nullptr);
  j["passed"] = passed();
  j["seconds"] = seconds;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results) {
    rows.push_back({{"group", r.group},
                    {"property", r.property},
                    {"passed", r.passed},
                    {"instances", r.instances},
                    {"worst", r.worst},
                    {"tolerance", r.tolerance},
                    {"failing_seeds", r.failing_seeds},
                    {"detail", r.detail},
                    {"seconds", r.seconds}});
  }
  j["results"] = rows;
  return j.dump(2);
}

VerifyReport run_verify(VerifyLevel level, std::uint64_t seed, std::optional<std::string> mutate) {
  if (mutate) {
    const auto& names = mutation_names();
    if (std::find(names.begin(), names.end(), *mutate) == names.end())
      throw std::invalid_argument("unknown mutation '" + *mutate + "'");
  }
  const auto t0 = Clock::now();
  SuiteOptions o;
  o.seed = seed;
  o.mutate = mutate;
  o.instances = level == VerifyLevel::Quick ? 10 : 50;
  const std::size_t inequality = level == VerifyLevel::Quick ? 20 : 100;

  VerifyReport rep;
  rep.level = level == VerifyLevel::Quick ? "quick" : "full";
  rep.mutate = mutate;
  auto append = [&](std::vector<PropertyResult> v) { rep.results.insert(rep.results.end(), v.begin(), v.end()); };
  append(verify_trh_formulas(o));
  append(verify_theorem4(o, inequality));
  append(verify_gradients(o));
  append(verify_pacbayes(o));
  append(verify_hutchinson(o));
  rep.seconds = seconds_since(t0);
  return rep;
}

}  // namespace trh
