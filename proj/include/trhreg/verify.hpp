#pragma once

// Oracle cross-validation suites: every analytic quantity is compared with
// an independent finite-difference or closed-form computation on random
// small instances.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trhreg/network.hpp"

namespace trh {

/// A random smooth instance: every hidden pre-activation of every row of x
/// and x_adv is at least `margin` away from zero.
struct VerifyInstance {
  MlpNetwork net;
  Matrix x;
  Matrix x_adv;
  std::vector<std::size_t> labels;
  std::uint64_t seed = 0;
};

struct InstanceLimits {
  std::size_t max_input = 6;
  std::size_t max_hidden = 8;
  std::size_t max_layers = 3;
  std::size_t max_classes = 5;
  std::size_t rows = 1;
  double margin = 0.05;
  /// Minimum gap between the two largest non-label adversarial probabilities.
  double kappa_gap = 0.05;
};

VerifyInstance random_instance(std::uint64_t seed, const InstanceLimits& limits = {});

/// Names accepted by `mutate`: a sign flip is injected into that formula as
/// seen by the suites.
const std::vector<std::string>& mutation_names();

struct PropertyResult {
  std::string group;
  std::string property;
  bool passed = true;
  std::size_t instances = 0;
  double worst = 0.0;
  double tolerance = 0.0;
  std::vector<std::uint64_t> failing_seeds;
  std::string detail;
  double seconds = 0.0;
};

struct SuiteOptions {
  std::size_t instances = 50;
  std::uint64_t seed = 1;
  std::optional<std::string> mutate;
};

/// Top-layer traces of AT, TRADES (both cases), ALP and MART against
/// second differences of the matching objective, rel. err ≤ 1e-5.
std::vector<PropertyResult> verify_trh_formulas(const SuiteOptions& o);
/// Layer traces against second differences (rel. err ≤ 1e-5) and the
/// inter-layer inequality on `inequality_instances` instances.
std::vector<PropertyResult> verify_theorem4(const SuiteOptions& o, std::size_t inequality_instances);
/// Backprop of the full training objective against central differences,
/// rel. err ≤ 1e-6.
std::vector<PropertyResult> verify_gradients(const SuiteOptions& o);
/// KL properties, closed-form variances against a log grid, and the
/// surrogate/objective identity.
std::vector<PropertyResult> verify_pacbayes(const SuiteOptions& o);
/// Hutchinson exactness on diagonal Hessians, the trace-10 quadratic and
/// Tr(H²) against the Frobenius norm.
std::vector<PropertyResult> verify_hutchinson(const SuiteOptions& o);

enum class VerifyLevel { Quick, Full };
VerifyLevel parse_verify_level(const std::string& s);

struct VerifyReport {
  std::string level;
  std::optional<std::string> mutate;
  std::vector<PropertyResult> results;
  double seconds = 0.0;

  bool passed() const;
  std::string to_json() const;
};

VerifyReport run_verify(VerifyLevel level, std::uint64_t seed = 1, std::optional<std::string> mutate = {});

}  // namespace trh
