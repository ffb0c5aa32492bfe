#pragma once

// Datasets: synthetic Two Moons and a CSV loader.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "trhreg/numerics.hpp"

namespace trh {

struct Dataset {
  Matrix inputs;                    // m × d
  std::vector<std::size_t> labels;  // m
  std::size_t num_classes = 0;
  /// Scalar std divided out by normalize_center (1 when raw).
  double scale = 1.0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  /// Rows `idx` as a new dataset.
  Dataset subset(const std::vector<std::size_t>& idx) const;
  void validate() const;
};

/// Upper arc (cos t, sin t) with label 0 gets ⌈n/2⌉ points, lower arc
/// (1 − cos t, 0.5 − sin t) with label 1 gets ⌊n/2⌋; t ~ U[0, π], then
/// isotropic Gaussian noise.
Dataset two_moons(std::size_t n, double noise_std, std::uint64_t seed);

/// Comma-separated features followed by an integer label. A first line that
/// does not parse as numbers is treated as a header.
Dataset load_csv(const std::string& path);
Dataset parse_csv(const std::string& text);
void save_csv(const std::string& path, const Dataset& ds);

/// Subtracts the global mean and divides by the global std (floor 1e-12).
Dataset normalize_center(const Dataset& ds);

}  // namespace trh
