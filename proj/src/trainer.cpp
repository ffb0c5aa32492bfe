#include "trhreg/trainer.hpp"

#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "trhreg/theorem4.hpp"

namespace trh {

LrDecay parse_lr_decay(const std::string& s) {
  if (s == "cosine") return LrDecay::Cosine;
  if (s == "multistep") return LrDecay::Multistep;
  if (s == "constant") return LrDecay::Constant;
  throw std::invalid_argument("unknown lr decay '" + s + "' (expected cosine|multistep|constant)");
}

Baseline parse_baseline(const std::string& s) {
  if (s == "none") return Baseline::None;
  if (s == "swa") return Baseline::SWA;
  if (s == "awp") return Baseline::AWP;
  throw std::invalid_argument("unknown baseline '" + s + "' (expected none|swa|awp)");
}

std::string to_string(LrDecay d) {
  switch (d) {
    case LrDecay::Cosine: return "cosine";
    case LrDecay::Multistep: return "multistep";
    case LrDecay::Constant: return "constant";
  }
  return "?";
}

std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::None: return "none";
    case Baseline::SWA: return "swa";
    case Baseline::AWP: return "awp";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
  if (!(base_lr > 0.0)) throw std::invalid_argument("train.base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (!(gamma >= 0.0)) throw std::invalid_argument("train.gamma must be >= 0");
  if (baseline == Baseline::SWA && !(swa_alpha >= 0.0 && swa_alpha < 1.0))
    throw std::invalid_argument("train.swa_alpha must be in [0, 1)");
  if (baseline == Baseline::AWP && !(awp_delta > 0.0)) throw std::invalid_argument("train.awp_delta must be > 0");
  for (double m : lr_milestones)
    if (!(m > 0.0 && m < 1.0)) throw std::invalid_argument("train.lr_milestones must lie in (0, 1)");
}

double lambda_at(LambdaSchedule schedule, std::size_t t, std::size_t total, double lambda_max) {
  if (total == 0 || t >= total) throw std::out_of_range("lambda_at: need 0 <= t < T");
  switch (schedule) {
    case LambdaSchedule::Constant:
      return lambda_max;
    case LambdaSchedule::Linear:
      return total == 1 ? lambda_max : lambda_max * static_cast<double>(t) / static_cast<double>(total - 1);
    case LambdaSchedule::Multistep: {
      const double tt = static_cast<double>(t);
      const double T = static_cast<double>(total);
      if (tt < 0.1 * T) return 0.01 * lambda_max;
      if (tt < 0.5 * T) return 0.1 * lambda_max;
      return lambda_max;
    }
  }
  return lambda_max;
}

double lr_at(const TrainConfig& cfg, std::size_t t, std::size_t total) {
  if (total == 0 || t >= total) throw std::out_of_range("lr_at: need 0 <= t < T");
  if (t < cfg.warmup_iters)
    return cfg.base_lr * static_cast<double>(t) / static_cast<double>(cfg.warmup_iters);
  switch (cfg.lr_decay) {
    case LrDecay::Constant:
      return cfg.base_lr;
    case LrDecay::Cosine: {
      const std::size_t span = total - cfg.warmup_iters;
      if (span <= 1) return cfg.base_lr;
      const double u = static_cast<double>(t - cfg.warmup_iters) / static_cast<double>(span - 1);
      return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
    }
    case LrDecay::Multistep: {
      double lr = cfg.base_lr;
      for (double m : cfg.lr_milestones)
        if (static_cast<double>(t) >= m * static_cast<double>(total)) lr *= cfg.lr_drop;
      return lr;
    }
  }
  return cfg.base_lr;
}

void swa_update(Vector& avg, std::span<const double> theta, double alpha) {
  if (avg.size() != theta.size()) throw std::invalid_argument("swa_update: size mismatch");
  for (std::size_t i = 0; i < avg.size(); ++i) avg[i] = alpha * avg[i] + (1.0 - alpha) * theta[i];
}

Vector awp_step(const MlpNetwork& net, const Matrix& x, const Matrix& x_adv, std::span<const std::size_t> labels,
                const ObjectiveSpec& spec, double delta_awp) {
  if (!(delta_awp > 0.0)) throw std::invalid_argument("awp_step: delta_awp must be > 0");
  ObjectiveSpec plain = spec;
  plain.lambda = 0.0;
  plain.gamma = 0.0;
  const GradientResult g = backprop(net, [&](ad::Tape& t, const TapeNetwork& tn) {
    return algorithm1_loss(t, tn, x, x_adv, labels, plain);
  });
  Vector xi(g.gradient.size(), 0.0);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const ParameterBlock b = weight_block(net, l);
    const std::span<const double> gl(g.gradient.data() + b.offset, b.count);
    const double gn = norm2(gl);
    const double wn = norm2(net.layer(l).weights.data());
    if (gn == 0.0 || wn == 0.0) continue;
    const double f = delta_awp * wn / gn;
    for (std::size_t i = 0; i < b.count; ++i) xi[b.offset + i] = f * gl[i];
  }
  return xi;
}

namespace {

/// Mean CE at fixed inputs with ReLU masks frozen at the base weights.
GradientFunction frozen_ce_gradient(const MlpNetwork& base, const Matrix& x_adv, const std::vector<std::size_t>& labels) {
  auto masks = std::make_shared<std::vector<Matrix>>(relu_masks(base, x_adv));
  auto onehot = std::make_shared<Matrix>(one_hot(labels, base.num_classes()));
  return [base, x_adv, masks, onehot](std::span<const double> theta) {
    const MlpNetwork net = unflatten_weights(base, theta);
    return backprop(net, [&](ad::Tape& t, const TapeNetwork& tn) {
             const TapeForward f = tape_forward(tn, t.constant(x_adv), masks.get());
             return ad::mean(tape::cross_entropy(f.logits, *onehot));
           })
        .gradient;
  };
}

/// Hutchinson Tr(H) and Tr(H²) over a subset of coordinates with a shared
/// probe set.
struct BlockEstimate {
  TraceEstimate trace;
  TraceEstimate trace_sq;
};

BlockEstimate hutchinson_block(const HessianVectorProduct& hvp, std::size_t dim,
                               const std::vector<std::size_t>& idx, std::size_t probes, Rng rng) {
  Vector tr, sq;
  for (std::size_t p = 0; p < probes; ++p) {
    const Vector v = rademacher_vector(idx.size(), rng);
    Vector full(dim, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) full[idx[i]] = v[i];
    const Vector hv = hvp(full);
    double q = 0.0, n = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      q += v[i] * hv[idx[i]];
      n += hv[idx[i]] * hv[idx[i]];
    }
    tr.push_back(q);
    sq.push_back(n);
  }
  auto summarize = [](const Vector& s) {
    TraceEstimate e;
    e.probes = s.size();
    const double n = static_cast<double>(s.size());
    e.estimate = sum(s) / n;
    if (s.size() > 1) {
      double ss = 0.0;
      for (double v : s) ss += (v - e.estimate) * (v - e.estimate);
      e.standard_error = std::sqrt(ss / (n - 1.0) / n);
    }
    return e;
  };
  return {summarize(tr), summarize(sq)};
}

}  // namespace

TraceMeasurement measure_trace(const MlpNetwork& net, const Dataset& data, const RobustLossKind& kind,
                               const AttackConfig& attack, const MeasureConfig& cfg, std::uint64_t attack_seed) {
  TraceMeasurement m;
  const AttackConfig inner = inner_attack_for(kind, attack);
  const Matrix x_adv =
      inner.delta > 0.0 ? pgd_batch(net, data.inputs, data.labels, inner, Rng(attack_seed, 3)) : data.inputs;
  const double n = static_cast<double>(data.size());

  for (std::size_t i = 0; i < data.size(); ++i) {
    const ForwardTrace adv = forward(net, x_adv.row(i));
    const ForwardTrace clean = kind.uses_clean() ? forward(net, data.inputs.row(i)) : adv;
    m.trh_top += trh_top(kind, clean, adv, data.labels[i]);
  }
  m.trh_top /= n;

  if (cfg.layers || cfg.spectrum) {
    ad::Tape t;
    const TapeNetwork tn = bind(t, net, false);
    const TapeForward f = tape_forward(tn, t.constant(x_adv));
    for (std::size_t l = 0; l < net.depth(); ++l)
      m.trh_layers.push_back(ad::mean(tape::trh_ce_layer(tn, f, l)).scalar());
  }

  if (cfg.full || cfg.spectrum) {
    const Vector theta = flatten_weights(net);
    const HessianVectorProduct hvp = hvp_from_gradient(frozen_ce_gradient(net, x_adv, data.labels), theta);
    const std::vector<std::size_t> all = weight_indices(net);
    const BlockEstimate whole = hutchinson_block(hvp, theta.size(), all, cfg.probes, Rng(cfg.probe_seed, 0));
    m.trh_full_estimate = whole.trace.estimate;
    m.trh_full_stderr = whole.trace.standard_error;
    m.full_measured = true;
    if (cfg.spectrum) {
      double total = 0.0;
      for (double v : m.trh_layers) total += v;
      m.spectrum.push_back(make_report(0, total, whole.trace_sq.estimate, all.size()));
      for (std::size_t l = 0; l < net.depth(); ++l) {
        const auto idx = block_indices(weight_block(net, l));
        const BlockEstimate b = hutchinson_block(hvp, theta.size(), idx, cfg.probes, Rng(cfg.probe_seed, l + 1));
        m.spectrum.push_back(make_report(l + 1, m.trh_layers[l], b.trace_sq.estimate, idx.size()));
      }
    }
  }
  return m;
}

namespace {

std::string meta_line(const MetricsLog& log) {
  if (log.meta.empty()) return {};
  std::string s = "#";
  for (const auto& [k, v] : log.meta) s += " " + k + "=" + v;
  return s + "\n";
}

}  // namespace

std::string MetricsLog::metrics_csv() const {
  std::ostringstream out;
  out << meta_line(*this);
  out << "epoch,train_loss,clean_acc,robust_acc,lambda_eff,lr\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.clean_acc) << ','
        << format_double(r.robust_acc) << ',' << format_double(r.lambda_eff) << ',' << format_double(r.lr) << '\n';
  return out.str();
}

std::string MetricsLog::trace_csv(std::size_t depth) const {
  std::ostringstream out;
  out << meta_line(*this);
  out << "epoch,trh_top_analytic,trh_full_estimate,trh_full_stderr";
  for (std::size_t l = 1; l <= depth; ++l) out << ",trh_layer_" << l;
  out << ",train_loss,robust_acc\n";
  for (const auto& r : rows) {
    if (!r.trace) continue;
    const TraceMeasurement& m = *r.trace;
    out << r.epoch << ',' << format_double(m.trh_top) << ',';
    if (m.full_measured) out << format_double(m.trh_full_estimate) << ',' << format_double(m.trh_full_stderr);
    else out << ',';
    for (std::size_t l = 0; l < depth; ++l) out << ',' << (l < m.trh_layers.size() ? format_double(m.trh_layers[l]) : "");
    out << ',' << format_double(r.train_loss) << ',' << format_double(r.robust_acc) << '\n';
  }
  return out.str();
}

std::string MetricsLog::spectrum_csv() const {
  std::ostringstream out;
  out << meta_line(*this);
  out << "epoch,layer,trace,trace_sq,eig_mean,eig_std\n";
  for (const auto& r : rows) {
    if (!r.trace) continue;
    for (const auto& s : r.trace->spectrum)
      out << r.epoch << ',' << s.layer << ',' << format_double(s.trace) << ',' << format_double(s.trace_sq) << ','
          << format_double(s.eig_mean) << ',' << format_double(s.eig_std) << '\n';
  }
  return out.str();
}

TrainResult train(MlpNetwork net, const Dataset& data, const TrainInputs& in, const Dataset* eval_data) {
  data.validate();
  in.train.validate();
  in.trh.validate();
  if (data.dim() != net.input_dim()) throw std::invalid_argument("dataset dimension does not match the network");
  const TrainConfig& tc = in.train;
  const Dataset& eval_set = eval_data ? *eval_data : data;

  const std::size_t m = data.size();
  const std::size_t bs = tc.batch_size == 0 || tc.batch_size >= m ? m : tc.batch_size;
  const std::size_t iters_per_epoch = m / bs;
  const std::size_t total = tc.epochs * iters_per_epoch;

  Rng shuffle_rng(tc.seed, 1);
  const Rng attack_rng(tc.seed, 2);
  const AttackConfig inner = inner_attack_for(in.kind, in.attack);

  Vector theta = flatten_weights(net);
  Vector velocity(theta.size(), 0.0);
  Vector swa = theta;
  const bool use_swa = tc.baseline == Baseline::SWA;

  TrainResult res{net, net, {}, false, -1, {}};
  res.log.meta = {{"loss", in.kind.name()},
                  {"penalty", format_double(in.kind.penalty)},
                  {"trh_lambda", format_double(in.trh.lambda)},
                  {"trh_scope", in.trh.scope == TrHScope::Full ? "full" : "top"},
                  {"gamma", format_double(tc.gamma)},
                  {"seed", std::to_string(tc.seed)}};
  if (in.kind.variant == RobustLossKind::Variant::TRADES)
    res.log.meta.insert(res.log.meta.begin() + 2, {"lambda_t", format_double(in.kind.penalty)});

  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;

  std::size_t t = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    if (bs < m) {
      for (std::size_t i = m - 1; i > 0; --i) std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
    }
    double loss_sum = 0.0;
    double lambda_eff = 0.0, lr = 0.0;
    for (std::size_t it = 0; it < iters_per_epoch; ++it, ++t) {
      Dataset batch_store;
      const Dataset* batch = &data;
      if (bs < m) {
        batch_store = data.subset(std::vector<std::size_t>(order.begin() + it * bs, order.begin() + (it + 1) * bs));
        batch = &batch_store;
      }
      lambda_eff = lambda_at(in.trh.schedule, t, total, in.trh.lambda);
      lr = lr_at(tc, t, total);
      const ObjectiveSpec spec{in.kind, in.trh, lambda_eff, tc.gamma};
      const Matrix x_adv = inner.delta > 0.0
                               ? pgd_batch(net, batch->inputs, batch->labels, inner, attack_rng.derive(t))
                               : batch->inputs;
      MlpNetwork point = net;
      if (tc.baseline == Baseline::AWP) {
        const Vector xi = awp_step(net, batch->inputs, x_adv, batch->labels, spec, tc.awp_delta);
        Vector shifted = theta;
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += xi[i];
        point = unflatten_weights(net, shifted);
      }
      GradientResult g;
      try {
        g = backprop(point, [&](ad::Tape& tape, const TapeNetwork& tn) {
          return algorithm1_loss(tape, tn, batch->inputs, x_adv, batch->labels, spec);
        });
      } catch (const TrainingDiverged& e) {
        res.diverged = true;
        res.diverged_iteration = static_cast<long>(t);
        res.divergence_message = e.what();
        return res;
      }
      if (!(g.loss <= kDivergenceLoss)) {
        res.diverged = true;
        res.diverged_iteration = static_cast<long>(t);
        res.divergence_message = "objective " + format_double(g.loss) + " exceeds the divergence threshold";
        return res;
      }
      for (std::size_t i = 0; i < theta.size(); ++i) {
        velocity[i] = tc.momentum * velocity[i] + g.gradient[i];
        theta[i] -= lr * velocity[i];
      }
      for (double v : theta) {
        if (!std::isfinite(v)) {
          res.diverged = true;
          res.diverged_iteration = static_cast<long>(t);
          res.divergence_message = "non-finite weights after update";
          return res;
        }
      }
      net = unflatten_weights(net, theta);
      if (use_swa) swa_update(swa, theta, tc.swa_alpha);
      res.net = net;
      res.eval_net = use_swa ? unflatten_weights(net, swa) : net;
      loss_sum += g.loss;
    }

    EpochMetrics row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(iters_per_epoch);
    row.clean_acc = clean_accuracy(res.eval_net, eval_set);
    row.robust_acc = eval_robust_accuracy(res.eval_net, eval_set, in.eval_attack, tc.seed);
    row.lambda_eff = lambda_eff;
    row.lr = lr;
    const MeasureConfig& mc = in.measure;
    if (mc.every > 0 && (epoch % mc.every == 0 || epoch == tc.epochs))
      row.trace = measure_trace(res.eval_net, data, in.kind, in.attack, mc, tc.seed);
    res.log.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace trh
