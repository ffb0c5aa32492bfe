#pragma once

// Regularized adversarial training with momentum SGD, λ / learning-rate
// schedules, SWA and AWP baselines, and per-epoch measurements.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "trhreg/attacks.hpp"
#include "trhreg/data.hpp"
#include "trhreg/hessian_oracle.hpp"
#include "trhreg/losses.hpp"
#include "trhreg/network.hpp"
#include "trhreg/trh.hpp"

namespace trh {

enum class LrDecay { Cosine, Multistep, Constant };
enum class Baseline { None, SWA, AWP };

LrDecay parse_lr_decay(const std::string& s);
Baseline parse_baseline(const std::string& s);
std::string to_string(LrDecay d);
std::string to_string(Baseline b);

struct TrainConfig {
  std::size_t epochs = 100;
  /// 0 = full batch.
  std::size_t batch_size = 0;
  double base_lr = 0.1;
  double momentum = 0.9;
  std::size_t warmup_iters = 0;
  LrDecay lr_decay = LrDecay::Cosine;
  /// Multistep drop points as fractions of the total iterations.
  std::vector<double> lr_milestones{0.5, 0.75};
  double lr_drop = 0.1;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  Baseline baseline = Baseline::None;
  double swa_alpha = 0.995;
  double awp_delta = 0.005;

  void validate() const;
};

/// Constant → λ; Linear → λ·t/(T−1); Multistep → 0.01λ, 0.1λ, λ with
/// switches at 0.1T and 0.5T.
double lambda_at(LambdaSchedule schedule, std::size_t t, std::size_t total, double lambda_max);

/// Linear warmup from 0 to base_lr over warmup_iters, then the decay rule
/// over the remaining iterations.
double lr_at(const TrainConfig& cfg, std::size_t t, std::size_t total);

/// avg ← α·avg + (1 − α)·θ
void swa_update(Vector& avg, std::span<const double> theta, double alpha);

/// One normalized ascent step on every weight matrix, then per-layer
/// projection to ‖ξ^(i)‖ ≤ δ·‖W^(i)‖. Biases are not perturbed. Returns ξ in
/// flattened layout.
Vector awp_step(const MlpNetwork& net, const Matrix& x, const Matrix& x_adv, std::span<const std::size_t> labels,
                const ObjectiveSpec& spec, double delta_awp);

/// What to measure, and how often.
struct MeasureConfig {
  std::size_t every = 0;  // epochs; 0 disables
  bool top = true;
  bool full = false;      // Hutchinson estimate of the full weight-space trace
  bool layers = false;    // exact per-layer CE traces
  bool spectrum = false;  // per-layer Tr(H²) and eigenvalue statistics
  std::size_t probes = 16;
  std::uint64_t probe_seed = 12345;
};

struct TraceMeasurement {
  double trh_top = 0.0;
  double trh_full_estimate = 0.0;
  double trh_full_stderr = 0.0;
  bool full_measured = false;
  Vector trh_layers;
  std::vector<LayerHessianReport> spectrum;  // layer 0 first
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double lambda_eff = 0.0;
  double lr = 0.0;
  std::optional<TraceMeasurement> trace;
};

struct MetricsLog {
  /// key=value pairs written as a comment line above the header.
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<EpochMetrics> rows;

  std::string metrics_csv() const;
  /// epoch, trh_top_analytic, trh_full_estimate, trh_full_stderr, trh_layer_1..L, train_loss, robust_acc
  std::string trace_csv(std::size_t depth) const;
  /// epoch, layer, trace, trace_sq, eig_mean, eig_std
  std::string spectrum_csv() const;
};

struct TrainResult {
  MlpNetwork net;       // last good raw weights
  MlpNetwork eval_net;  // SWA average when enabled, otherwise = net
  MetricsLog log;
  bool diverged = false;
  long diverged_iteration = -1;
  std::string divergence_message;
};

struct TrainInputs {
  RobustLossKind kind = RobustLossKind::at();
  TrHConfig trh;
  AttackConfig attack;
  /// Attack used for the per-epoch robust accuracy.
  AttackConfig eval_attack;
  TrainConfig train;
  MeasureConfig measure;
};

/// Divergence threshold on the batch objective.
inline constexpr double kDivergenceLoss = 1e6;

/// CE Hessian measurement at adversarial inputs of `data` (weights only).
TraceMeasurement measure_trace(const MlpNetwork& net, const Dataset& data, const RobustLossKind& kind,
                               const AttackConfig& attack, const MeasureConfig& cfg, std::uint64_t attack_seed);

TrainResult train(MlpNetwork net, const Dataset& data, const TrainInputs& in, const Dataset* eval_data = nullptr);

}  // namespace trh
