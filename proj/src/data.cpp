#include "trhreg/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "trhreg/network.hpp"

namespace trh {

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
  Dataset out;
  out.inputs = Matrix(idx.size(), dim());
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = inputs.row(idx[i]);
    std::copy(src.begin(), src.end(), out.inputs.row(i).begin());
    out.labels.push_back(labels[idx[i]]);
  }
  out.num_classes = num_classes;
  out.scale = scale;
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset is empty");
  if (inputs.rows() != labels.size()) throw std::invalid_argument("dataset: inputs/labels size mismatch");
  for (std::size_t y : labels)
    if (y >= num_classes) throw std::invalid_argument("dataset: label out of range");
}

Dataset two_moons(std::size_t n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("two_moons: need n >= 2");
  if (!(noise_std >= 0.0)) throw std::invalid_argument("two_moons: noise_std must be >= 0");
  Rng rng(seed);
  Dataset ds;
  ds.inputs = Matrix(n, 2);
  ds.labels.resize(n);
  ds.num_classes = 2;
  const std::size_t upper = (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x, y;
    if (i < upper) {
      x = std::cos(t);
      y = std::sin(t);
      ds.labels[i] = 0;
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
      ds.labels[i] = 1;
    }
    if (noise_std > 0.0) {
      x += noise_std * rng.normal();
      y += noise_std * rng.normal();
    }
    ds.inputs(i, 0) = x;
    ds.inputs(i, 1) = y;
  }
  return ds;
}

namespace {

bool parse_number(std::string tok, double& out) {
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\t')) tok.pop_back();
  std::size_t start = 0;
  while (start < tok.size() && (tok[start] == ' ' || tok[start] == '\t')) ++start;
  tok = tok.substr(start);
  if (!tok.empty() && tok[0] == '+') tok = tok.substr(1);
  if (tok.empty()) return false;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Dataset parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t cols = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto toks = split_commas(line);
    std::vector<double> row(toks.size());
    bool ok = toks.size() >= 2;
    for (std::size_t i = 0; ok && i < toks.size(); ++i) ok = parse_number(toks[i], row[i]);
    if (!ok) {
      if (first) {
        first = false;
        continue;  // header
      }
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": malformed row");
    }
    first = false;
    if (cols == 0) cols = toks.size();
    if (toks.size() != cols)
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                               " columns, got " + std::to_string(toks.size()));
    const double lab = row.back();
    if (lab < 0 || lab != std::floor(lab))
      throw std::runtime_error("csv line " + std::to_string(lineno) + ": label must be a non-negative integer");
    values.insert(values.end(), row.begin(), row.end() - 1);
    labels.push_back(static_cast<std::size_t>(lab));
  }
  if (labels.empty()) throw std::runtime_error("csv: no data rows");
  Dataset ds;
  ds.inputs = Matrix(labels.size(), cols - 1, std::move(values));
  ds.labels = std::move(labels);
  std::size_t k = 0;
  for (std::size_t y : ds.labels) k = std::max(k, y + 1);
  ds.num_classes = std::max<std::size_t>(k, 2);
  return ds;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

void save_csv(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (double v : ds.inputs.row(r)) out << format_double(v) << ',';
    out << ds.labels[r] << '\n';
  }
}

Dataset normalize_center(const Dataset& ds) {
  Dataset out = ds;
  const auto d = out.inputs.data();
  if (d.empty()) return out;
  const double n = static_cast<double>(d.size());
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  const double sd = std::max(std::sqrt(var / n), 1e-12);
  for (double& v : d) v = (v - mean) / sd;
  out.scale = ds.scale * sd;
  return out;
}

}  // namespace trh
