#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

#include "doctest.h"
#include "trhreg/data.hpp"

using namespace trh;

namespace {

std::string csv_error(const std::string& text) {
  try {
    parse_csv(text);
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

void global_moments(const Dataset& ds, double& mean, double& sd) {
  const auto d = ds.inputs.data();
  mean = 0.0;
  for (double v : d) mean += v;
  mean /= d.size();
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  sd = std::sqrt(var / d.size());
}

}  // namespace

TEST_CASE("two_moons n=4 without noise lies on the arcs") {
  const Dataset ds = two_moons(4, 0.0, 1);
  REQUIRE(ds.size() == 4);
  CHECK(ds.num_classes == 2);
  CHECK(ds.labels == std::vector<std::size_t>{0, 0, 1, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = ds.inputs(i, 0), y = ds.inputs(i, 1);
    if (ds.labels[i] == 0) {
      CHECK(x * x + y * y == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(y >= 0.0);
    } else {
      CHECK((1.0 - x) * (1.0 - x) + (0.5 - y) * (0.5 - y) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(y <= 0.5);
    }
  }
}

TEST_CASE("two_moons is reproducible per seed and balanced") {
  const Dataset a = two_moons(501, 0.1, 7), b = two_moons(501, 0.1, 7), c = two_moons(501, 0.1, 8);
  CHECK(a.inputs == b.inputs);
  CHECK(a.labels == b.labels);
  CHECK_FALSE(a.inputs == c.inputs);
  std::size_t zeros = 0;
  for (auto y : a.labels) zeros += y == 0;
  CHECK(zeros == 251);
  CHECK_THROWS(two_moons(1, 0.1, 0));
  CHECK_THROWS(two_moons(10, -1.0, 0));
}

TEST_CASE("CSV round trips values exactly") {
  const std::filesystem::path p = std::filesystem::temp_directory_path() / "trhreg_test_roundtrip.csv";
  Dataset ds;
  ds.inputs = Matrix::from_rows({{0.1, -2.5e-7, 3.0}, {std::numbers::pi, 1e300, -0.0}});
  ds.labels = {1, 0};
  ds.num_classes = 2;
  save_csv(p.string(), ds);
  const Dataset back = load_csv(p.string());
  CHECK(back.inputs == ds.inputs);
  CHECK(back.labels == ds.labels);
  CHECK(back.num_classes == 2);
  std::filesystem::remove(p);
  CHECK_THROWS(load_csv("/nonexistent/trhreg.csv"));
}

TEST_CASE("CSV accepts a header and CRLF line endings") {
  const Dataset ds = parse_csv("x1,x2,label\r\n1.5,2,0\r\n-1,0.25,2\r\n");
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 2);
  CHECK(ds.inputs(1, 1) == 0.25);
  CHECK(ds.num_classes == 3);
}

TEST_CASE("CSV errors carry the line number") {
  CHECK(csv_error("1,2,0\n3,abc,1\n").find("line 2") != std::string::npos);
  CHECK(csv_error("1,2,0\n3,4,1\n5,0\n").find("line 3") != std::string::npos);
  const std::string lab = csv_error("1,2,0\n3,4,1.5\n");
  CHECK(lab.find("line 2") != std::string::npos);
  CHECK(lab.find("label") != std::string::npos);
  CHECK(csv_error("1,2,-1\n").find("line 1") != std::string::npos);
  CHECK_FALSE(csv_error("x,y\n").empty());
}

TEST_CASE("normalize_center gives zero mean and unit std, and is idempotent") {
  const Dataset ds = two_moons(500, 0.1, 3);
  const Dataset n1 = normalize_center(ds);
  double mean, sd;
  global_moments(n1, mean, sd);
  CHECK(std::abs(mean) <= 1e-9);
  CHECK(std::abs(sd - 1.0) <= 1e-9);
  double m0, s0;
  global_moments(ds, m0, s0);
  CHECK(n1.scale == doctest::Approx(s0).epsilon(1e-12));
  const Dataset n2 = normalize_center(n1);
  for (std::size_t i = 0; i < n1.inputs.size(); ++i)
    CHECK(std::abs(n2.inputs.data()[i] - n1.inputs.data()[i]) <= 1e-9);
  CHECK(n1.labels == ds.labels);
}

TEST_CASE("normalize_center leaves a constant dataset at zero") {
  Dataset ds;
  ds.inputs = Matrix(3, 2, 4.0);
  ds.labels = {0, 1, 0};
  ds.num_classes = 2;
  const Dataset n = normalize_center(ds);
  for (double v : n.inputs.data()) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.0);
  }
}

TEST_CASE("subset and validate") {
  const Dataset ds = two_moons(10, 0.0, 1);
  const Dataset s = ds.subset({9, 0});
  CHECK(s.size() == 2);
  CHECK(s.labels == std::vector<std::size_t>{1, 0});
  CHECK(s.inputs(0, 0) == ds.inputs(9, 0));
  Dataset bad = ds;
  bad.labels[0] = 5;
  CHECK_THROWS(bad.validate());
}
