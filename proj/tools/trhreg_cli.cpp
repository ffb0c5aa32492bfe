// Experiment runner: train, eval, trace, spectrum, sweep and verify.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "trhreg/config.hpp"
#include "trhreg/trainer.hpp"
#include "trhreg/verify.hpp"

namespace fs = std::filesystem;
using namespace trh;

namespace {

enum Exit { kOk = 0, kConfig = 1, kDiverged = 2, kVerifyFailed = 3 };

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "experiment config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "overrides train.seed and model.seed");
  cmd->add_option("--out", a.out, "output directory (overrides out.dir)");
  cmd->add_option("--set", a.set, "extra key=value overrides")->take_all();
}

ConfigFile load_config(const CommonArgs& a) {
  ConfigFile f = ConfigFile::load(a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, 0, "--set expects key=value");
    f.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (a.seed) {
    f.set("train.seed", std::to_string(*a.seed));
    f.set("model.seed", std::to_string(*a.seed));
  }
  if (!a.out.empty()) f.set("out.dir", a.out);
  return f;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Trains per the config and writes checkpoint, metrics and any trace or
/// spectrum tables.
int run_training(ExperimentConfig cfg, bool write_trace, bool write_spectrum) {
  ExperimentData data = load_experiment_data(cfg);
  MlpNetwork net = make_network(cfg, data.train.dim(), data.train.num_classes);
  const TrainResult res = train(net, data.train, cfg.inputs, data.test ? &*data.test : nullptr);

  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  save_checkpoint((dir / "checkpoint.trhnet").string(), res.eval_net);
  write_file(dir / "metrics.csv", res.log.metrics_csv());
  if (write_trace || cfg.inputs.measure.every > 0) write_file(dir / "trace.csv", res.log.trace_csv(net.depth()));
  if (write_spectrum) write_file(dir / "spectrum.csv", res.log.spectrum_csv());

  if (res.diverged) {
    std::cerr << "diverged at iteration " << res.diverged_iteration << ": " << res.divergence_message
              << " (last good checkpoint saved)\n";
    return kDiverged;
  }
  if (!res.log.rows.empty()) {
    const EpochMetrics& last = res.log.rows.back();
    std::cout << "epoch " << last.epoch << " loss " << format_double(last.train_loss) << " clean_acc "
              << format_double(last.clean_acc) << " robust_acc " << format_double(last.robust_acc) << "\n";
  }
  std::cout << "wrote " << dir.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-of-Hessian regularized adversarial training"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network");
  add_common(train_cmd, train_args);

  CommonArgs trace_args;
  std::vector<std::string> measure{"top"};
  std::size_t trace_every = 1;
  CLI::App* trace_cmd = app.add_subcommand("trace", "train and log TrH trajectories to trace.csv");
  add_common(trace_cmd, trace_args);
  trace_cmd->add_option("--measure", measure, "top, full and/or layers")->delimiter(',');
  trace_cmd->add_option("--every", trace_every, "measurement period in epochs")->check(CLI::PositiveNumber);

  CommonArgs spec_args;
  std::size_t spec_every = 1;
  CLI::App* spec_cmd = app.add_subcommand("spectrum", "train and log per-layer Hessian statistics");
  add_common(spec_cmd, spec_args);
  spec_cmd->add_option("--every", spec_every, "measurement period in epochs")->check(CLI::PositiveNumber);

  std::string ckpt, dataset, eval_config, eval_out, norm = "linf";
  double delta = 0.02, step_size = 0.0;
  std::size_t steps = 10, restarts = 1, two_moons_n = 0;
  double noise = 0.1;
  std::uint64_t data_seed = 0, eval_seed = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "clean and PGD accuracy of a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt, "TRHNET v1 checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", dataset, "CSV dataset")->check(CLI::ExistingFile);
  eval_cmd->add_option("--two-moons", two_moons_n, "generate a Two Moons set of this size instead");
  eval_cmd->add_option("--noise", noise, "Two Moons noise std");
  eval_cmd->add_option("--data-seed", data_seed, "Two Moons seed");
  eval_cmd->add_option("--norm", norm, "linf or l2");
  eval_cmd->add_option("--delta", delta, "attack radius (0 gives clean accuracy)");
  eval_cmd->add_option("--steps", steps, "PGD steps")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--step-size", step_size, "PGD step size (0 = 2.5*delta/steps)");
  eval_cmd->add_option("--restarts", restarts, "random restarts")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval_seed, "attack seed");
  eval_cmd->add_option("--out", eval_out, "also write a one-row CSV here");

  CommonArgs sweep_args;
  std::string param = "lambda";
  std::vector<std::string> values;
  std::size_t threads = 0;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "train once per value of one config key");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--param", param, "config key to vary ('lambda' = trh.lambda)");
  sweep_cmd->add_option("--values", values, "values to try")->required()->delimiter(',');
  sweep_cmd->add_option("--threads", threads, "parallel trials (0 = hardware)");

  std::string level = "quick", report_path;
  std::optional<std::string> mutate;
  std::uint64_t verify_seed = 1;
  CLI::App* verify_cmd = app.add_subcommand("verify", "run the oracle cross-validation suites");
  verify_cmd->add_option("--level", level, "quick or full");
  verify_cmd->add_option("--mutate", mutate, "inject a sign flip into one formula");
  verify_cmd->add_option("--seed", verify_seed, "base instance seed");
  verify_cmd->add_option("--report", report_path, "write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) {
      return run_training(ExperimentConfig::from(load_config(train_args)), false, false);
    }
    if (*trace_cmd) {
      ConfigFile f = load_config(trace_args);
      ExperimentConfig cfg = ExperimentConfig::from(f);
      MeasureConfig& m = cfg.inputs.measure;
      m.every = trace_every;
      for (const auto& what : measure) {
        if (what == "full") m.full = true;
        else if (what == "layers") m.layers = true;
        else if (what != "top") throw ConfigError("--measure", 0, "expected top, full or layers, got '" + what + "'");
      }
      return run_training(cfg, true, false);
    }
    if (*spec_cmd) {
      ExperimentConfig cfg = ExperimentConfig::from(load_config(spec_args));
      cfg.inputs.measure.every = spec_every;
      cfg.inputs.measure.spectrum = true;
      cfg.inputs.measure.full = true;
      cfg.inputs.measure.layers = true;
      return run_training(cfg, true, true);
    }
    if (*eval_cmd) {
      const MlpNetwork net = load_checkpoint(ckpt);
      if (dataset.empty() == (two_moons_n == 0)) throw ConfigError("--dataset", 0, "give exactly one of --dataset or --two-moons");
      const Dataset ds = dataset.empty() ? two_moons(two_moons_n, noise, data_seed) : load_csv(dataset);
      if (ds.dim() != net.input_dim() || ds.num_classes > net.num_classes())
        throw std::invalid_argument("dataset does not match the checkpoint (dim " + std::to_string(ds.dim()) +
                                    " vs " + std::to_string(net.input_dim()) + ")");
      AttackConfig a;
      a.norm = parse_norm(norm);
      a.delta = delta;
      a.steps = steps;
      a.step_size = step_size;
      a.restarts = restarts;
      if (!(delta >= 0.0)) throw ConfigError("--delta", 0, "must be >= 0");
      const double clean = clean_accuracy(net, ds);
      const double robust = eval_robust_accuracy(net, ds, a, eval_seed);
      std::cout << "clean_acc " << format_double(clean) << "\nrobust_acc " << format_double(robust) << "\n";
      if (!eval_out.empty())
        write_file(eval_out, "clean_acc,robust_acc,norm,delta,steps,restarts\n" + format_double(clean) + "," +
                                 format_double(robust) + "," + norm + "," + format_double(delta) + "," +
                                 std::to_string(steps) + "," + std::to_string(restarts) + "\n");
      return kOk;
    }
    if (*sweep_cmd) {
      if (values.size() < 2) throw ConfigError("--values", 0, "need at least two values");
      const ConfigFile base = load_config(sweep_args);
      const std::string key = param == "lambda" ? "trh.lambda" : param;
      const std::string out_dir = ExperimentConfig::from(base).out_dir;
      std::vector<std::string> rows(values.size());
      std::vector<bool> ok(values.size(), false);
      std::atomic<std::size_t> next{0};
      std::mutex log_mutex;
      auto worker = [&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
          try {
            ConfigFile f = base;
            f.set(key, values[i]);
            ExperimentConfig cfg = ExperimentConfig::from(f);
            cfg.inputs.measure.every = 0;
            ExperimentData data = load_experiment_data(cfg);
            const MlpNetwork net = make_network(cfg, data.train.dim(), data.train.num_classes);
            const TrainResult res = train(net, data.train, cfg.inputs, data.test ? &*data.test : nullptr);
            if (res.diverged || res.log.rows.empty()) {
              rows[i] = values[i] + ",,,diverged";
            } else {
              const EpochMetrics& last = res.log.rows.back();
              rows[i] = values[i] + "," + format_double(last.clean_acc) + "," + format_double(last.robust_acc) + ",ok";
              ok[i] = true;
            }
          } catch (const std::exception& e) {
            std::string msg = e.what();
            for (char& c : msg)
              if (c == ',' || c == '\n') c = ';';
            rows[i] = values[i] + ",,,error: " + msg;
          }
          std::lock_guard<std::mutex> lock(log_mutex);
          std::cerr << "trial " << values[i] << ": " << rows[i] << "\n";
        }
      };
      const std::size_t n_threads =
          std::min<std::size_t>(values.size(), threads ? threads : std::max(1u, std::thread::hardware_concurrency()));
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
      std::string csv = "value,clean_acc,robust_acc,status\n";
      for (const auto& r : rows) csv += r + "\n";
      fs::create_directories(out_dir);
      write_file(fs::path(out_dir) / "sweep.csv", csv);
      std::cout << csv;
      return std::find(ok.begin(), ok.end(), true) != ok.end() ? kOk : kDiverged;
    }
    if (*verify_cmd) {
      const VerifyReport rep = run_verify(parse_verify_level(level), verify_seed, mutate);
      for (const auto& r : rep.results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.group << "/" << r.property << "  worst=" << r.worst
                  << " tol=" << r.tolerance << " n=" << r.instances;
        if (!r.failing_seeds.empty()) {
          std::cout << " seeds=";
          for (std::size_t i = 0; i < std::min<std::size_t>(5, r.failing_seeds.size()); ++i)
            std::cout << (i ? "," : "") << r.failing_seeds[i];
        }
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << "\n";
      }
      std::cout << (rep.passed() ? "verify passed" : "verify FAILED") << " in " << rep.seconds << " s\n";
      if (!report_path.empty()) write_file(report_path, rep.to_json() + "\n");
      return rep.passed() ? kOk : kVerifyFailed;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
