#pragma once

// PGD inner maximization and the multi-restart robust-accuracy evaluation.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trhreg/data.hpp"
#include "trhreg/network.hpp"
#include "trhreg/numerics.hpp"

namespace trh {

enum class Norm { Linf, L2 };
/// MART's inner maximization uses CE, so it is an alias for CE here.
enum class InnerLoss { CE, KL, MART };

Norm parse_norm(const std::string& s);
std::string to_string(Norm n);
InnerLoss parse_inner_loss(const std::string& s);

struct AttackConfig {
  Norm norm = Norm::Linf;
  double delta = 0.02;
  std::size_t steps = 10;
  /// 0 selects the default 2.5·δ/steps.
  double step_size = 0.0;
  std::size_t restarts = 1;
  InnerLoss inner_loss = InnerLoss::CE;
  bool random_start = true;
  std::optional<std::pair<double, double>> clamp;

  double effective_step_size() const { return step_size > 0.0 ? step_size : 2.5 * delta / steps; }
  /// Training-time validation: delta > 0.
  void validate() const;
};

/// Projects x_adv onto the `norm` ball of radius delta around x0.
Vector project(std::span<const double> x_adv, std::span<const double> x0, Norm norm, double delta);
/// Row-wise projection of a batch.
void project_rows(Matrix& x_adv, const Matrix& x0, Norm norm, double delta);

/// Batch input gradient of the summed per-example inner loss.
using InputGradient = std::function<Matrix(const Matrix& x)>;
/// Per-example inner loss values, used to pick the best restart.
using InputLoss = std::function<Vector(const Matrix& x)>;

/// Generic PGD: example i draws its random start from rng.derive(i), restart
/// r of example i from rng.derive(i).derive(r).
Matrix pgd_generic(const Matrix& x, const InputGradient& grad, const InputLoss& loss,
                   const AttackConfig& cfg, const Rng& rng);

/// PGD against the network. For the KL inner loss the clean softmax is frozen.
Matrix pgd_batch(const MlpNetwork& net, const Matrix& x, std::span<const std::size_t> labels,
                 const AttackConfig& cfg, const Rng& rng);
Vector pgd(const MlpNetwork& net, std::span<const double> x, std::size_t y, const AttackConfig& cfg,
           const Rng& rng);

/// argmax with lowest index on ties.
std::size_t predict(const MlpNetwork& net, std::span<const double> x);
double clean_accuracy(const MlpNetwork& net, const Dataset& ds);

/// Fraction of points classified correctly under every restart of a CE PGD
/// attack. delta == 0 returns the clean accuracy.
double eval_robust_accuracy(const MlpNetwork& net, const Dataset& ds, const AttackConfig& cfg,
                            std::uint64_t seed);

}  // namespace trh
