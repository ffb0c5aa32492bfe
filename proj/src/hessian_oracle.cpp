#include "trhreg/hessian_oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace trh {

std::vector<std::size_t> select_parameters(const MlpNetwork& net, ParameterSelection sel) {
  switch (sel.kind) {
    case ParameterSelection::Kind::All: {
      std::vector<std::size_t> out(net.parameter_count());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
      return out;
    }
    case ParameterSelection::Kind::Weights:
      return weight_indices(net);
    case ParameterSelection::Kind::Top:
      return block_indices(weight_block(net, net.depth() - 1));
    case ParameterSelection::Kind::Layer:
      if (sel.layer >= net.depth()) throw std::out_of_range("select_parameters: layer out of range");
      return block_indices(weight_block(net, sel.layer));
  }
  return {};
}

double exact_trace(const GradientFunction& grad, std::span<const double> w, std::span<const std::size_t> indices,
                   double h) {
  const Vector d = finite_diff_hessian_diag(grad, w, h, indices);
  return sum(d);
}

QuadraticForm quadratic_form_from_loss(ScalarFunction f, Vector w, double h) {
  const double f0 = f(w);
  return [f = std::move(f), w = std::move(w), h, f0](std::span<const double> v) {
    Vector p = w, m = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      p[i] += h * v[i];
      m[i] -= h * v[i];
    }
    return (f(p) - 2.0 * f0 + f(m)) / (h * h);
  };
}

HessianVectorProduct hvp_from_gradient(GradientFunction grad, Vector w, double h) {
  return [grad = std::move(grad), w = std::move(w), h](std::span<const double> v) {
    Vector p = w, m = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      p[i] += h * v[i];
      m[i] -= h * v[i];
    }
    const Vector gp = grad(p);
    const Vector gm = grad(m);
    Vector out(gp.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * h);
    return out;
  };
}

QuadraticForm quadratic_form_from_hvp(HessianVectorProduct hvp) {
  return [hvp = std::move(hvp)](std::span<const double> v) { return dot(v, hvp(v)); };
}

namespace {

TraceEstimate summarize(const Vector& samples) {
  TraceEstimate out;
  out.probes = samples.size();
  const double n = static_cast<double>(samples.size());
  out.estimate = sum(samples) / n;
  if (samples.size() > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - out.estimate) * (s - out.estimate);
    out.standard_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

}  // namespace

TraceEstimate hutchinson_trace(const QuadraticForm& q, std::size_t dim, std::size_t probes, Rng& rng) {
  if (probes < 1) throw std::invalid_argument("hutchinson_trace: probes must be >= 1");
  Vector samples;
  samples.reserve(probes);
  for (std::size_t p = 0; p < probes; ++p) samples.push_back(q(rademacher_vector(dim, rng)));
  return summarize(samples);
}

TraceEstimate hutchinson_trace_sq(const HessianVectorProduct& hvp, std::size_t dim, std::size_t probes, Rng& rng) {
  if (probes < 1) throw std::invalid_argument("hutchinson_trace_sq: probes must be >= 1");
  Vector samples;
  samples.reserve(probes);
  for (std::size_t p = 0; p < probes; ++p) samples.push_back(squared_norm(hvp(rademacher_vector(dim, rng))));
  return summarize(samples);
}

EigenStats eigen_stats(double trace, double trace_sq, std::size_t n) {
  if (n < 1) throw std::invalid_argument("eigen_stats: n must be >= 1");
  EigenStats s;
  s.mean = trace / static_cast<double>(n);
  s.std = std::sqrt(std::max(0.0, trace_sq / static_cast<double>(n) - s.mean * s.mean));
  return s;
}

LayerHessianReport make_report(std::size_t layer, double trace, double trace_sq, std::size_t n) {
  const EigenStats s = eigen_stats(trace, trace_sq, n);
  return {layer, trace, trace_sq, s.mean, s.std, n};
}

}  // namespace trh
