#pragma once

// Dense ReLU network g(x) = θ_tᵀ f(x).
//
// Layer ℓ (0-based) holds W of shape d_in × d_out; pre-activation is
// a = Wᵀ·input + b. Hidden layers apply ReLU, the last layer is linear and
// bias-free. In the 1-based layer-input convention used by the Theorem-4
// helpers, I^(1) = x, I^(ℓ+1) is the input of 0-based layer ℓ, and
// I^(L+1) is the logit vector.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trhreg/autodiff.hpp"
#include "trhreg/numerics.hpp"

namespace trh {

struct DenseLayer {
  Matrix weights;              // d_in × d_out
  std::optional<Vector> bias;  // d_out

  std::size_t in_dim() const { return weights.rows(); }
  std::size_t out_dim() const { return weights.cols(); }
};

class MlpNetwork {
 public:
  MlpNetwork() = default;
  /// Validates dimension chaining, bias-free top layer and K ≥ 2.
  explicit MlpNetwork(std::vector<DenseLayer> layers);

  /// Gaussian init with variance 1/d_in, zero biases.
  /// `dims` = {input, hidden..., K}.
  static MlpNetwork random(const std::vector<std::size_t>& dims, bool hidden_bias, Rng& rng);

  std::size_t depth() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t num_classes() const { return layers_.back().out_dim(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  /// Mutable weights of layer i; the shape must not be changed.
  Matrix& weights(std::size_t i) { return layers_.at(i).weights; }
  std::optional<Vector>& bias(std::size_t i) { return layers_.at(i).bias; }

  std::size_t parameter_count() const;

 private:
  std::vector<DenseLayer> layers_;
};

/// Offsets into the flattened parameter vector.
///
/// Ordering: for each layer in order, weights row-major, then the bias.
struct ParameterBlock {
  std::size_t offset = 0;
  std::size_t count = 0;
};
ParameterBlock weight_block(const MlpNetwork& net, std::size_t layer);
/// Empty block when the layer has no bias.
ParameterBlock bias_block(const MlpNetwork& net, std::size_t layer);
/// Indices of every weight-matrix entry (biases excluded).
std::vector<std::size_t> weight_indices(const MlpNetwork& net);
std::vector<std::size_t> block_indices(ParameterBlock block);

Vector flatten_weights(const MlpNetwork& net);
MlpNetwork unflatten_weights(const MlpNetwork& like, std::span<const double> theta);

struct ForwardTrace {
  /// inputs[ℓ] is the input of layer ℓ; inputs[0] = x, inputs.back() = z.
  std::vector<Vector> inputs;
  /// Pre-activations of every layer; preact.back() = logits.
  std::vector<Vector> preact;
  Vector logits;

  const Vector& features() const { return inputs.back(); }
};

ForwardTrace forward(const MlpNetwork& net, std::span<const double> x);
Vector logits(const MlpNetwork& net, std::span<const double> x);

/// Smallest |pre-activation| over the hidden layers; +inf for a linear net.
double min_abs_preactivation(const MlpNetwork& net, std::span<const double> x);
inline constexpr double kSmoothMargin = 1e-3;
bool is_smooth(const MlpNetwork& net, std::span<const double> x, double margin = kSmoothMargin);

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(const std::string& what, long iteration = -1)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

// --- tape integration ------------------------------------------------------

/// Network parameters bound to a tape.
struct TapeNetwork {
  std::vector<ad::Var> weights;
  std::vector<std::optional<ad::Var>> biases;
};

/// Binds every parameter as a tape variable (or constant when !trainable).
TapeNetwork bind(ad::Tape& tape, const MlpNetwork& net, bool trainable = true);

struct TapeForward {
  std::vector<ad::Var> inputs;  // as in ForwardTrace, one row per example
  ad::Var logits;
  std::vector<Matrix> masks;    // ReLU masks of hidden layers (B × d_out)

  ad::Var features() const { return inputs.back(); }
};

/// Batch forward: x is B × d. Passing `frozen_masks` replaces the ReLU
/// pattern (keeps second differences on one linear piece).
TapeForward tape_forward(const TapeNetwork& net, ad::Var x,
                         const std::vector<Matrix>* frozen_masks = nullptr);

/// ReLU masks of a batch under the current weights.
std::vector<Matrix> relu_masks(const MlpNetwork& net, const Matrix& x);

using TapeObjective = std::function<ad::Var(ad::Tape&, const TapeNetwork&)>;

struct GradientResult {
  double loss = 0.0;
  Vector gradient;  // flattened, same ordering as flatten_weights
};

/// Exact gradient of a scalar tape objective. Throws TrainingDiverged if the
/// value is not finite.
GradientResult backprop(const MlpNetwork& net, const TapeObjective& objective);

/// Evaluates an objective without building gradients.
double evaluate(const MlpNetwork& net, const TapeObjective& objective);

// --- checkpoint -------------------------------------------------------------

void write_checkpoint(std::ostream& out, const MlpNetwork& net);
MlpNetwork read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const MlpNetwork& net);
MlpNetwork load_checkpoint(const std::string& path);

/// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

}  // namespace trh
