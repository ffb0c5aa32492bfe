#include "trhreg/theorem4.hpp"

#include <algorithm>
#include <cmath>

#include "trhreg/losses.hpp"

namespace trh {

namespace {

void check_level(const MlpNetwork& net, std::size_t level, std::size_t lo, std::size_t hi) {
  if (level < lo || level > hi)
    throw std::out_of_range("level " + std::to_string(level) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "] for a depth-" + std::to_string(net.depth()) + " network");
}

void require_smooth(const MlpNetwork& net, std::span<const double> x) {
  const double m = min_abs_preactivation(net, x);
  if (m < kSmoothMargin)
    throw NonSmoothInput("input is within " + format_double(m) + " of a ReLU kink (margin " +
                         format_double(kSmoothMargin) + ")");
}

/// Vector at level i (1-based): inputs for i ≤ L, logits for L+1.
const Vector& level_values(const ForwardTrace& t, std::size_t level) {
  return level <= t.inputs.size() ? t.inputs[level - 1] : t.logits;
}

Matrix jacobian_from_trace(const MlpNetwork& net, const ForwardTrace& t, std::size_t level) {
  const std::size_t L = net.depth();
  Matrix j = Matrix::identity(net.num_classes());
  for (std::size_t lv = L; lv >= level; --lv) {
    // J^(lv) = (J^(lv+1) ⊙ mask^(lv+1)) · W^(lv)ᵀ
    if (lv < L) {
      const Vector& pre = t.preact[lv - 1];
      for (std::size_t k = 0; k < j.rows(); ++k)
        for (std::size_t d = 0; d < j.cols(); ++d)
          if (!(pre[d] > 0.0)) j(k, d) = 0.0;
    }
    j = matmul_nt(j, net.layer(lv - 1).weights);
    if (lv == 1) break;
  }
  return j;
}

}  // namespace

Matrix input_jacobian(const MlpNetwork& net, std::span<const double> x, std::size_t level) {
  check_level(net, level, 1, net.depth() + 1);
  return jacobian_from_trace(net, forward(net, x), level);
}

std::vector<std::size_t> positive_set(const MlpNetwork& net, std::span<const double> x, std::size_t level) {
  check_level(net, level, 1, net.depth() + 1);
  const ForwardTrace t = forward(net, x);
  const Vector& v = level_values(t, level);
  std::vector<std::size_t> out;
  for (std::size_t d = 0; d < v.size(); ++d)
    if (level == net.depth() + 1 || v[d] > 0.0) out.push_back(d);
  return out;
}

LayerHTensor layer_h_tensor(const MlpNetwork& net, std::span<const double> x, std::size_t level) {
  check_level(net, level, 1, net.depth() + 1);
  require_smooth(net, x);
  const ForwardTrace t = forward(net, x);
  const SoftmaxDerivs sd = softmax_derivs(t.logits);
  LayerHTensor out;
  out.level = level;
  out.values = jacobian_from_trace(net, t, level);
  for (std::size_t k = 0; k < out.values.rows(); ++k)
    for (double& v : out.values.row(k)) v = v * v * sd.h[k];
  out.positive_set = positive_set(net, x, level);
  return out;
}

double trh_ce_layer(const MlpNetwork& net, std::span<const double> x, std::size_t level) {
  check_level(net, level, 2, net.depth() + 1);
  require_smooth(net, x);
  const ForwardTrace t = forward(net, x);
  const SoftmaxDerivs sd = softmax_derivs(t.logits);
  const Matrix j = jacobian_from_trace(net, t, level);
  double q = 0.0;
  for (std::size_t d : positive_set(net, x, level)) {
    // J_dᵀ Φ J_d
    for (std::size_t a = 0; a < j.rows(); ++a)
      for (std::size_t b = 0; b < j.rows(); ++b) q += j(a, d) * sd.phi(a, b) * j(b, d);
  }
  return squared_norm(t.inputs[level - 2]) * q;
}

double trh_ce_layer_diagonal(const MlpNetwork& net, std::span<const double> x, std::size_t level) {
  check_level(net, level, 2, net.depth() + 1);
  const LayerHTensor h = layer_h_tensor(net, x, level);
  double q = 0.0;
  for (std::size_t d : h.positive_set)
    for (std::size_t k = 0; k < h.values.rows(); ++k) q += h.values(k, d);
  return squared_norm(forward(net, x).inputs[level - 2]) * q;
}

double trh_ce_full(const MlpNetwork& net, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t level = 2; level <= net.depth() + 1; ++level) s += trh_ce_layer(net, x, level);
  return s;
}

double l1_operator_norm(const Matrix& w) {
  if (w.empty()) throw std::invalid_argument("l1_operator_norm: empty matrix");
  double best = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double s = 0.0;
    for (double v : w.row(r)) s += std::abs(v);
    best = std::max(best, s);
  }
  return best;
}

LayerInequality check_layer_inequality(const MlpNetwork& net, std::span<const double> x, std::size_t level,
                                       double slack) {
  check_level(net, level, 1, net.depth());
  const LayerHTensor lo = layer_h_tensor(net, x, level);
  const LayerHTensor hi = layer_h_tensor(net, x, level + 1);
  const auto lo_d = lo.values.data();
  const auto hi_d = hi.values.data();
  LayerInequality out;
  out.lhs = *std::max_element(lo_d.begin(), lo_d.end());
  const double n1 = l1_operator_norm(net.layer(level - 1).weights);
  out.rhs = *std::max_element(hi_d.begin(), hi_d.end()) * n1 * n1;
  out.holds = out.lhs <= out.rhs + slack;
  return out;
}

namespace tape {

namespace {

/// Per-example trace for one layer given per-class Jacobians (B×D each) of
/// the layer's output level and the output mask (null at the logit level).
ad::Var layer_trace(ad::Var input, const std::vector<ad::Var>& jac, const Matrix* mask, ad::Var probs) {
  ad::Tape& t = input.tape();
  ad::Var quad, mixed;
  for (std::size_t k = 0; k < jac.size(); ++k) {
    const ad::Var sk = ad::column(probs, k);
    const ad::Var a = ad::mul_col(ad::square(jac[k]), sk);
    const ad::Var m = ad::mul_col(jac[k], sk);
    quad = k == 0 ? a : quad + a;
    mixed = k == 0 ? m : mixed + m;
  }
  ad::Var per_unit = quad - ad::square(mixed);
  if (mask) per_unit = per_unit * t.constant(*mask);
  return ad::row_sum(ad::square(input)) * ad::row_sum(per_unit);
}

/// Jacobians ∂g_k/∂z for the penultimate features, one B×D matrix per class.
std::vector<ad::Var> top_jacobians(const TapeNetwork& net, std::size_t batch) {
  const ad::Var w = net.weights.back();
  ad::Tape& t = w.tape();
  const ad::Var ones = t.constant(Matrix(batch, 1, 1.0));
  std::vector<ad::Var> jac;
  for (std::size_t k = 0; k < w.cols(); ++k) jac.push_back(ad::matmul_nt(ones, ad::column(w, k)));
  return jac;
}

}  // namespace

ad::Var trh_ce_full(const TapeNetwork& net, const TapeForward& fwd) {
  const std::size_t L = net.weights.size();
  const ad::Var probs = ad::softmax_rows(fwd.logits);
  const std::size_t batch = fwd.logits.rows();
  // Top layer: J = I, so Σ_d Φ_dd = 1ᵀh.
  ad::Var total = ad::row_sum(ad::square(fwd.inputs[L - 1])) * ad::row_sum(probs - ad::square(probs));
  if (L == 1) return total;
  std::vector<ad::Var> jac = top_jacobians(net, batch);
  for (std::size_t layer = L - 1; layer-- > 0;) {
    // jac holds ∂g/∂inputs[layer+1]; masks[layer] marks the active outputs.
    total = total + layer_trace(fwd.inputs[layer], jac, &fwd.masks[layer], probs);
    if (layer == 0) break;
    for (auto& j : jac) j = ad::matmul_nt(ad::apply_mask(j, fwd.masks[layer]), net.weights[layer]);
  }
  return total;
}

ad::Var trh_ce_layer(const TapeNetwork& net, const TapeForward& fwd, std::size_t layer) {
  const std::size_t L = net.weights.size();
  if (layer >= L) throw std::out_of_range("trh_ce_layer: layer out of range");
  const ad::Var probs = ad::softmax_rows(fwd.logits);
  if (layer == L - 1) return ad::row_sum(ad::square(fwd.inputs[L - 1])) * ad::row_sum(probs - ad::square(probs));
  std::vector<ad::Var> jac = top_jacobians(net, fwd.logits.rows());
  for (std::size_t l = L - 1; l-- > layer + 1;)
    for (auto& j : jac) j = ad::matmul_nt(ad::apply_mask(j, fwd.masks[l]), net.weights[l]);
  return layer_trace(fwd.inputs[layer], jac, &fwd.masks[layer], probs);
}

}  // namespace tape

}  // namespace trh
