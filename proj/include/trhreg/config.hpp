#pragma once

// Line-oriented `key = value` experiment configuration with dotted keys and
// `#` comments, plus the typed experiment description built from it.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trhreg/attacks.hpp"
#include "trhreg/data.hpp"
#include "trhreg/losses.hpp"
#include "trhreg/network.hpp"
#include "trhreg/pacbayes.hpp"
#include "trhreg/trainer.hpp"
#include "trhreg/trh.hpp"

namespace trh {

/// Carries the offending key and its line (0 for command-line overrides).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, std::size_t line, const std::string& msg);
  const std::string& key() const { return key_; }
  std::size_t line() const { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::string& path);

  /// Adds or replaces a value (line 0).
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  /// Source line of `key` (0 when absent or overridden).
  std::size_t line(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key, const std::vector<std::size_t>& fallback) const;

  /// Throws on the first key no getter has asked for.
  void reject_unused() const;

 private:
  struct Entry {
    std::string value;
    std::size_t line = 0;
    mutable bool used = false;
  };
  const Entry* find(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

struct DataSpec {
  std::string source = "two_moons";  // two_moons | csv
  std::size_t n = 500;
  double noise = 0.1;
  std::uint64_t seed = 0;
  std::string path;
  /// Held-out set: a csv path, or a second Two Moons draw of this size.
  std::string test_path;
  std::size_t test_n = 0;
  bool normalize = false;
};

struct ModelSpec {
  std::vector<std::size_t> hidden{100, 100};
  bool hidden_bias = true;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  DataSpec data;
  ModelSpec model;
  TrainInputs inputs;
  std::optional<PacBayesConfig> pacbayes;
  std::string out_dir = "out";

  /// Builds and validates, including γ/λ against β/σ0² when the PAC-Bayes
  /// block is present.
  static ExperimentConfig from(const ConfigFile& file);
};

struct ExperimentData {
  Dataset train;
  std::optional<Dataset> test;
};

/// Loads or generates the data. With normalization on, attack radii are
/// divided by the normalization scale.
ExperimentData load_experiment_data(ExperimentConfig& cfg);

MlpNetwork make_network(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t num_classes);

}  // namespace trh
