#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "trhreg/config.hpp"

using namespace trh;

namespace {

std::string error_of(const std::string& text) {
  try {
    ExperimentConfig::from(ConfigFile::parse(text));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parsing: comments, whitespace, lines and duplicates") {
  const ConfigFile f = ConfigFile::parse("# header\n\n  a.b = 1.5  # trailing\nname=hello\nlist = 1, 2,3\n");
  CHECK(f.get_double("a.b", 0.0) == 1.5);
  CHECK(f.get_string("name", "") == "hello");
  CHECK(f.get_sizes("list", {}) == std::vector<std::size_t>{1, 2, 3});
  CHECK(f.line("a.b") == 3);
  CHECK(f.line("missing") == 0);
  CHECK(f.get_double("missing", 7.0) == 7.0);
  try {
    ConfigFile::parse("a = 1\nb = 2\na = 3\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "a");
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(ConfigFile::parse("just words\n"), ConfigError);
}

TEST_CASE("typed getters report key and line") {
  const ConfigFile f = ConfigFile::parse("x = 1\ny = abc\nz = maybe\nw = -3\n");
  try {
    f.get_double("y", 0.0);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "y");
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("line 2: y:") == 0);
  }
  CHECK_THROWS_AS(f.get_bool("z", false), ConfigError);
  CHECK_THROWS_AS(f.get_size("w", 0), ConfigError);
  ConfigFile g = f;
  g.set("y", "2.5");
  CHECK(g.get_double("y", 0.0) == 2.5);
  CHECK(g.line("y") == 0);
}

TEST_CASE("unknown keys are rejected with their line") {
  const std::string e = error_of("loss.kind = at\ntrain.epochz = 3\n");
  CHECK(e.find("line 2") != std::string::npos);
  CHECK(e.find("train.epochz") != std::string::npos);
  CHECK(e.find("unknown key") != std::string::npos);
}

TEST_CASE("invalid values name the key and line") {
  CHECK(error_of("attack.delta = -1\n").find("line 1: attack.delta") != std::string::npos);
  CHECK(error_of("\nloss.kind = hinge\n").find("line 2: loss.kind") != std::string::npos);
  CHECK(error_of("trh.lambda = -0.5\n").find("trh.lambda") != std::string::npos);
  CHECK(error_of("model.hidden = 4, 0\n").find("model.hidden") != std::string::npos);
  CHECK(error_of("train.epochs = 0\n").find("train.epochs") != std::string::npos);
  CHECK(error_of("loss.kind = trades\nloss.penalty = 6\ntrh.scope = full\n").find("line 3: trh.scope") !=
        std::string::npos);
  CHECK(error_of("data.source = csv\n").find("data.path") != std::string::npos);
}

TEST_CASE("defaults and overrides build the experiment") {
  const ExperimentConfig c = ExperimentConfig::from(ConfigFile::parse(
      "loss.kind = trades\nloss.penalty = 6\nattack.delta = 0.05\nattack.steps = 4\neval.steps = 20\n"
      "model.hidden = 16, 8\ntrain.epochs = 7\nout.dir = somewhere\n"));
  CHECK(c.inputs.kind.variant == RobustLossKind::Variant::TRADES);
  CHECK(c.inputs.kind.penalty == 6.0);
  CHECK(c.inputs.attack.delta == 0.05);
  CHECK(c.inputs.eval_attack.delta == 0.05);
  CHECK(c.inputs.eval_attack.steps == 20);
  CHECK(c.inputs.eval_attack.restarts == 1);
  CHECK(c.model.hidden == std::vector<std::size_t>{16, 8});
  CHECK(c.inputs.train.epochs == 7);
  CHECK(c.out_dir == "somewhere");
  CHECK_FALSE(c.pacbayes.has_value());
}

TEST_CASE("PAC-Bayes block fills and checks the reparameterization") {
  const ExperimentConfig c =
      ExperimentConfig::from(ConfigFile::parse("pacbayes.sigma0_sq = 0.02\npacbayes.beta = 25\n"));
  REQUIRE(c.pacbayes.has_value());
  CHECK(c.inputs.train.gamma == doctest::Approx(1.0 / (2.0 * 25.0 * 0.02)));
  CHECK(c.inputs.trh.lambda == doctest::Approx(0.01));
  CHECK_NOTHROW(ExperimentConfig::from(
      ConfigFile::parse("pacbayes.sigma0_sq = 0.02\npacbayes.beta = 25\ntrh.lambda = 0.01\ntrain.gamma = 1\n")));
  const std::string e = error_of("pacbayes.sigma0_sq = 0.02\npacbayes.beta = 25\ntrh.lambda = 0.5\n");
  CHECK(e.find("line 3: trh.lambda") != std::string::npos);
  CHECK(error_of("pacbayes.sigma0_sq = 0.02\npacbayes.beta = 25\ntrain.gamma = 3\n").find("train.gamma") !=
        std::string::npos);
}

TEST_CASE("normalization rescales the attack radius and applies train statistics to test data") {
  ExperimentConfig c = ExperimentConfig::from(ConfigFile::parse(
      "data.n = 100\ndata.test_n = 50\ndata.normalize = true\nattack.delta = 0.1\nattack.step_size = 0.05\n"));
  const Dataset raw = two_moons(100, 0.1, 0);
  const Dataset raw_test = two_moons(50, 0.1, 1);
  const ExperimentData d = load_experiment_data(c);
  REQUIRE(d.test.has_value());
  const double sd = d.train.scale;
  CHECK(c.inputs.attack.delta == doctest::Approx(0.1 / sd));
  CHECK(c.inputs.attack.step_size == doctest::Approx(0.05 / sd));
  CHECK(c.inputs.eval_attack.delta == doctest::Approx(0.1 / sd));
  double mu = 0.0;
  for (double v : raw.inputs.data()) mu += v;
  mu /= raw.inputs.size();
  CHECK(d.test->inputs(3, 1) == doctest::Approx((raw_test.inputs(3, 1) - mu) / sd));
}

TEST_CASE("CSV data source and network construction") {
  const auto p = std::filesystem::temp_directory_path() / "trhreg_config_data.csv";
  {
    std::ofstream out(p);
    out << "a,b,c,label\n1,2,3,0\n4,5,6,2\n7,8,9,1\n";
  }
  ExperimentConfig c = ExperimentConfig::from(
      ConfigFile::parse("data.source = csv\ndata.path = " + p.string() + "\nmodel.hidden = 5\nmodel.seed = 4\n"));
  const ExperimentData d = load_experiment_data(c);
  CHECK(d.train.size() == 3);
  CHECK_FALSE(d.test.has_value());
  const MlpNetwork a = make_network(c, d.train.dim(), d.train.num_classes);
  const MlpNetwork b = make_network(c, d.train.dim(), d.train.num_classes);
  CHECK(a.parameter_count() == 3 * 5 + 5 + 5 * 3);
  CHECK(flatten_weights(a) == flatten_weights(b));
  std::filesystem::remove(p);
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"moons_flatness_standard.cfg", "moons_flatness_top.cfg", "moons_flatness_full.cfg", "trades_two_moons.cfg",
                           "tiny.cfg"}) {
    CAPTURE(name);
    const std::string path = std::string(TRHREG_SOURCE_DIR) + "/configs/" + name;
    CHECK_NOTHROW(ExperimentConfig::from(ConfigFile::load(path)));
  }
  const ExperimentConfig top =
      ExperimentConfig::from(ConfigFile::load(std::string(TRHREG_SOURCE_DIR) + "/configs/moons_flatness_top.cfg"));
  CHECK(top.inputs.trh.lambda == 0.5);
  CHECK(top.inputs.attack.delta == 0.02);
  CHECK(top.inputs.attack.steps == 1);
  CHECK(top.model.hidden == std::vector<std::size_t>{100, 100});
}
