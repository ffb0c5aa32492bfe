#include "trhreg/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace trh {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::uint64_t to_u64(const std::string& s) {
  if (s.empty() || s[0] == '-') throw std::invalid_argument("not a non-negative integer: '" + s + "'");
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a non-negative integer: '" + s + "'");
  return v;
}

}  // namespace

ConfigError::ConfigError(const std::string& key, std::size_t line, const std::string& msg)
    : std::runtime_error((line > 0 ? "line " + std::to_string(line) + ": " : std::string()) +
                         (key.empty() ? msg : key + ": " + msg)),
      key_(key),
      line_(line) {}

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("", lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", lineno, "empty key");
    if (cfg.entries_.count(key)) throw ConfigError(key, lineno, "duplicate key");
    cfg.entries_[key] = Entry{value, lineno};
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", 0, "cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ConfigFile::set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }

bool ConfigFile::has(const std::string& key) const { return entries_.count(key) > 0; }

std::size_t ConfigFile::line(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? 0 : it->second.line;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  it->second.used = true;
  return &it->second;
}

namespace {

template <class T, class F>
T convert(const std::string& key, std::size_t line, const std::string& value, F&& f) {
  try {
    return f(value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, line, e.what());
  }
}

}  // namespace

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  const Entry* e = find(key);
  return e ? e->value : fallback;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  const Entry* e = find(key);
  return e ? convert<double>(key, e->line, e->value, to_double) : fallback;
}

std::size_t ConfigFile::get_size(const std::string& key, std::size_t fallback) const {
  const Entry* e = find(key);
  return e ? static_cast<std::size_t>(convert<std::uint64_t>(key, e->line, e->value, to_u64)) : fallback;
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t fallback) const {
  const Entry* e = find(key);
  return e ? convert<std::uint64_t>(key, e->line, e->value, to_u64) : fallback;
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
  if (e->value == "false" || e->value == "0" || e->value == "no") return false;
  throw ConfigError(key, e->line, "expected true or false, got '" + e->value + "'");
}

std::vector<double> ConfigFile::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<double> out;
  for (const auto& item : split_list(e->value)) out.push_back(convert<double>(key, e->line, item, to_double));
  return out;
}

std::vector<std::size_t> ConfigFile::get_sizes(const std::string& key,
                                               const std::vector<std::size_t>& fallback) const {
  const Entry* e = find(key);
  if (!e) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : split_list(e->value))
    out.push_back(static_cast<std::size_t>(convert<std::uint64_t>(key, e->line, item, to_u64)));
  return out;
}

void ConfigFile::reject_unused() const {
  for (const auto& [key, e] : entries_)
    if (!e.used) throw ConfigError(key, e.line, "unknown key");
}

namespace {

/// Runs `f` and reports any validation failure against `key`.
template <class F>
auto checked(const ConfigFile& file, const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(key, file.line(key), e.what());
  }
}

AttackConfig read_attack(const ConfigFile& f, const std::string& prefix, const AttackConfig& base) {
  AttackConfig a = base;
  const std::string norm_key = prefix + ".norm";
  a.norm = checked(f, norm_key, [&] { return parse_norm(f.get_string(norm_key, to_string(base.norm))); });
  a.delta = f.get_double(prefix + ".delta", base.delta);
  a.steps = f.get_size(prefix + ".steps", base.steps);
  a.step_size = f.get_double(prefix + ".step_size", base.step_size);
  a.restarts = f.get_size(prefix + ".restarts", base.restarts);
  a.random_start = f.get_bool(prefix + ".random_start", base.random_start);
  const bool has_lo = f.has(prefix + ".clamp_min");
  const bool has_hi = f.has(prefix + ".clamp_max");
  if (has_lo != has_hi)
    throw ConfigError(prefix + ".clamp_min", f.line(prefix + (has_lo ? ".clamp_min" : ".clamp_max")),
                      "clamp_min and clamp_max must be given together");
  if (has_lo) a.clamp = std::make_pair(f.get_double(prefix + ".clamp_min", 0.0), f.get_double(prefix + ".clamp_max", 0.0));
  if (a.steps < 1) throw ConfigError(prefix + ".steps", f.line(prefix + ".steps"), "must be >= 1");
  if (a.restarts < 1) throw ConfigError(prefix + ".restarts", f.line(prefix + ".restarts"), "must be >= 1");
  if (!(a.delta >= 0.0)) throw ConfigError(prefix + ".delta", f.line(prefix + ".delta"), "must be >= 0");
  return a;
}

}  // namespace

ExperimentConfig ExperimentConfig::from(const ConfigFile& f) {
  ExperimentConfig c;

  DataSpec& d = c.data;
  d.source = f.get_string("data.source", d.source);
  if (d.source != "two_moons" && d.source != "csv")
    throw ConfigError("data.source", f.line("data.source"), "expected two_moons or csv");
  d.n = f.get_size("data.n", d.n);
  d.noise = f.get_double("data.noise", d.noise);
  d.seed = f.get_u64("data.seed", d.seed);
  d.path = f.get_string("data.path", d.path);
  d.test_path = f.get_string("data.test_path", d.test_path);
  d.test_n = f.get_size("data.test_n", d.test_n);
  d.normalize = f.get_bool("data.normalize", d.normalize);
  if (d.source == "csv" && d.path.empty()) throw ConfigError("data.path", 0, "required when data.source = csv");
  if (d.source == "two_moons" && d.n < 2) throw ConfigError("data.n", f.line("data.n"), "must be >= 2");
  if (!(d.noise >= 0.0)) throw ConfigError("data.noise", f.line("data.noise"), "must be >= 0");

  ModelSpec& m = c.model;
  m.hidden = f.get_sizes("model.hidden", m.hidden);
  m.hidden_bias = f.get_bool("model.hidden_bias", m.hidden_bias);
  m.seed = f.get_u64("model.seed", m.seed);
  for (std::size_t w : m.hidden)
    if (w == 0) throw ConfigError("model.hidden", f.line("model.hidden"), "widths must be >= 1");

  TrainInputs& in = c.inputs;
  in.kind = checked(f, "loss.kind",
                    [&] { return parse_loss_kind(f.get_string("loss.kind", "at"), f.get_double("loss.penalty", 0.0)); });

  in.trh.lambda = f.get_double("trh.lambda", 0.0);
  in.trh.schedule = checked(f, "trh.schedule",
                            [&] { return parse_lambda_schedule(f.get_string("trh.schedule", "constant")); });
  in.trh.stop_grad_clean = f.get_bool("trh.stop_grad_clean", true);
  in.trh.scope = checked(f, "trh.scope", [&] { return parse_trh_scope(f.get_string("trh.scope", "top")); });
  checked(f, "trh.lambda", [&] { in.trh.validate(); return 0; });
  if (in.trh.scope == TrHScope::Full && in.kind.variant != RobustLossKind::Variant::AT)
    throw ConfigError("trh.scope", f.line("trh.scope"), "full scope is available for loss.kind = at only");

  in.attack = read_attack(f, "attack", AttackConfig{});
  checked(f, "attack.delta", [&] { in.attack.validate(); return 0; });
  AttackConfig eval_base = in.attack;
  eval_base.restarts = 1;
  in.eval_attack = read_attack(f, "eval", eval_base);

  TrainConfig& t = in.train;
  t.epochs = f.get_size("train.epochs", t.epochs);
  t.batch_size = f.get_size("train.batch_size", t.batch_size);
  t.base_lr = f.get_double("train.base_lr", t.base_lr);
  t.momentum = f.get_double("train.momentum", t.momentum);
  t.warmup_iters = f.get_size("train.warmup_iters", t.warmup_iters);
  t.lr_decay = checked(f, "train.lr_decay", [&] { return parse_lr_decay(f.get_string("train.lr_decay", "cosine")); });
  t.lr_milestones = f.get_doubles("train.lr_milestones", t.lr_milestones);
  t.lr_drop = f.get_double("train.lr_drop", t.lr_drop);
  t.gamma = f.get_double("train.gamma", t.gamma);
  t.seed = f.get_u64("train.seed", t.seed);
  t.baseline = checked(f, "train.baseline", [&] { return parse_baseline(f.get_string("train.baseline", "none")); });
  t.swa_alpha = f.get_double("train.swa_alpha", t.swa_alpha);
  t.awp_delta = f.get_double("train.awp_delta", t.awp_delta);
  checked(f, "train.epochs", [&] { t.validate(); return 0; });

  MeasureConfig& ms = in.measure;
  ms.every = f.get_size("measure.every", ms.every);
  ms.full = f.get_bool("measure.full", ms.full);
  ms.layers = f.get_bool("measure.layers", ms.layers);
  ms.spectrum = f.get_bool("measure.spectrum", ms.spectrum);
  ms.probes = f.get_size("measure.probes", ms.probes);
  ms.probe_seed = f.get_u64("measure.probe_seed", ms.probe_seed);
  if (ms.probes < 1) throw ConfigError("measure.probes", f.line("measure.probes"), "must be >= 1");

  if (f.has("pacbayes.sigma0_sq") || f.has("pacbayes.beta")) {
    PacBayesConfig p;
    p.sigma0_sq = f.get_double("pacbayes.sigma0_sq", p.sigma0_sq);
    p.beta = f.get_double("pacbayes.beta", p.beta);
    p.tau = f.get_double("pacbayes.tau", p.tau);
    p.m = f.get_size("pacbayes.m", p.m);
    p.c_const = f.get_double("pacbayes.c_const", p.c_const);
    checked(f, "pacbayes.sigma0_sq", [&] { p.validate(); return 0; });
    // Fill whichever of γ, λ the file leaves out; check the rest.
    if (!f.has("train.gamma")) t.gamma = p.gamma();
    if (!f.has("trh.lambda")) in.trh.lambda = p.lambda();
    checked(f, f.has("train.gamma") ? "train.gamma" : "trh.lambda",
            [&] { p.check_reparameterization(t.gamma, in.trh.lambda, 1e-9); return 0; });
    c.pacbayes = p;
  }

  c.out_dir = f.get_string("out.dir", c.out_dir);
  f.reject_unused();
  return c;
}

namespace {

Dataset load_or_generate(const DataSpec& d, bool test) {
  if (test) {
    if (!d.test_path.empty()) return load_csv(d.test_path);
    return two_moons(d.test_n, d.noise, d.seed + 1);
  }
  if (d.source == "csv") return load_csv(d.path);
  return two_moons(d.n, d.noise, d.seed);
}

}  // namespace

ExperimentData load_experiment_data(ExperimentConfig& cfg) {
  ExperimentData out;
  out.train = load_or_generate(cfg.data, false);
  if (!cfg.data.test_path.empty() || cfg.data.test_n > 0) out.test = load_or_generate(cfg.data, true);
  if (out.test && out.test->dim() != out.train.dim())
    throw std::invalid_argument("test data dimension does not match the training data");
  if (cfg.data.normalize) {
    const auto& raw = out.train.inputs.data();
    const double mu = sum(raw) / static_cast<double>(raw.size());
    const double scale_before = out.train.scale;
    out.train = normalize_center(out.train);
    const double sd = out.train.scale / scale_before;
    // The held-out set uses the training statistics.
    if (out.test) {
      for (double& v : out.test->inputs.data()) v = (v - mu) / sd;
      out.test->scale *= sd;
    }
    for (AttackConfig* a : {&cfg.inputs.attack, &cfg.inputs.eval_attack}) {
      a->delta /= sd;
      a->step_size /= sd;
      if (a->clamp) a->clamp = std::make_pair((a->clamp->first - mu) / sd, (a->clamp->second - mu) / sd);
    }
  }
  return out;
}

MlpNetwork make_network(const ExperimentConfig& cfg, std::size_t input_dim, std::size_t num_classes) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
  dims.push_back(num_classes);
  Rng rng(cfg.model.seed, 0x6d6f64656cULL);
  return MlpNetwork::random(dims, cfg.model.hidden_bias, rng);
}

}  // namespace trh
