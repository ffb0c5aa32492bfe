#include "trhreg/network.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace trh {

MlpNetwork::MlpNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const DenseLayer& l = layers_[i];
    if (l.in_dim() == 0 || l.out_dim() == 0)
      throw std::invalid_argument("layer " + std::to_string(i) + " has an empty weight matrix");
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim())
      throw std::invalid_argument("layer " + std::to_string(i) + " input dimension does not chain");
    if (l.bias && l.bias->size() != l.out_dim())
      throw std::invalid_argument("layer " + std::to_string(i) + " bias length mismatch");
  }
  if (layers_.back().bias) throw std::invalid_argument("top layer must be bias-free");
  if (layers_.back().out_dim() < 2) throw std::invalid_argument("need at least 2 classes");
}

MlpNetwork MlpNetwork::random(const std::vector<std::size_t>& dims, bool hidden_bias, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("dims needs input and output sizes");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weights = Matrix(dims[i], dims[i + 1]);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dims[i]));
    for (double& w : l.weights.data()) w = sd * rng.normal();
    if (hidden_bias && i + 2 < dims.size()) l.bias = Vector(dims[i + 1], 0.0);
    layers.push_back(std::move(l));
  }
  return MlpNetwork(std::move(layers));
}

std::size_t MlpNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + (l.bias ? l.bias->size() : 0);
  return n;
}

ParameterBlock weight_block(const MlpNetwork& net, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < layer; ++i) {
    const auto& l = net.layer(i);
    off += l.weights.size() + (l.bias ? l.bias->size() : 0);
  }
  return {off, net.layer(layer).weights.size()};
}

ParameterBlock bias_block(const MlpNetwork& net, std::size_t layer) {
  const ParameterBlock w = weight_block(net, layer);
  const auto& b = net.layer(layer).bias;
  return {w.offset + w.count, b ? b->size() : 0};
}

std::vector<std::size_t> block_indices(ParameterBlock block) {
  std::vector<std::size_t> out(block.count);
  for (std::size_t i = 0; i < block.count; ++i) out[i] = block.offset + i;
  return out;
}

std::vector<std::size_t> weight_indices(const MlpNetwork& net) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < net.depth(); ++i) {
    auto b = block_indices(weight_block(net, i));
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

Vector flatten_weights(const MlpNetwork& net) {
  Vector out;
  out.reserve(net.parameter_count());
  for (const auto& l : net.layers()) {
    out.insert(out.end(), l.weights.data().begin(), l.weights.data().end());
    if (l.bias) out.insert(out.end(), l.bias->begin(), l.bias->end());
  }
  return out;
}

MlpNetwork unflatten_weights(const MlpNetwork& like, std::span<const double> theta) {
  if (theta.size() != like.parameter_count())
    throw std::invalid_argument("unflatten_weights: expected " + std::to_string(like.parameter_count()) +
                                " values, got " + std::to_string(theta.size()));
  std::vector<DenseLayer> layers = like.layers();
  std::size_t pos = 0;
  for (auto& l : layers) {
    for (double& w : l.weights.data()) w = theta[pos++];
    if (l.bias)
      for (double& b : *l.bias) b = theta[pos++];
  }
  return MlpNetwork(std::move(layers));
}

ForwardTrace forward(const MlpNetwork& net, std::span<const double> x) {
  if (x.size() != net.input_dim())
    throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) + ", expected " +
                                std::to_string(net.input_dim()));
  ForwardTrace t;
  t.inputs.emplace_back(x.begin(), x.end());
  for (std::size_t li = 0; li < net.depth(); ++li) {
    const DenseLayer& l = net.layer(li);
    const Vector& in = t.inputs.back();
    // Same accumulation order as the batched tape path.
    Vector a(l.out_dim(), 0.0);
    for (std::size_t r = 0; r < l.in_dim(); ++r) {
      const double v = in[r];
      if (v == 0.0) continue;
      auto row = l.weights.row(r);
      for (std::size_t c = 0; c < a.size(); ++c) a[c] += v * row[c];
    }
    if (l.bias)
      for (std::size_t c = 0; c < a.size(); ++c) a[c] += (*l.bias)[c];
    t.preact.push_back(a);
    if (li + 1 < net.depth()) {
      for (double& v : a) v = v > 0.0 ? v : 0.0;
      t.inputs.push_back(std::move(a));
    } else {
      t.logits = std::move(a);
    }
  }
  return t;
}

Vector logits(const MlpNetwork& net, std::span<const double> x) { return forward(net, x).logits; }

double min_abs_preactivation(const MlpNetwork& net, std::span<const double> x) {
  const ForwardTrace t = forward(net, x);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t li = 0; li + 1 < t.preact.size(); ++li)
    for (double v : t.preact[li]) m = std::min(m, std::abs(v));
  return m;
}

bool is_smooth(const MlpNetwork& net, std::span<const double> x, double margin) {
  return min_abs_preactivation(net, x) >= margin;
}

TapeNetwork bind(ad::Tape& tape, const MlpNetwork& net, bool trainable) {
  TapeNetwork out;
  for (const auto& l : net.layers()) {
    out.weights.push_back(trainable ? tape.variable(l.weights) : tape.constant(l.weights));
    if (l.bias) {
      Matrix b = Matrix::row_vector(*l.bias);
      out.biases.emplace_back(trainable ? tape.variable(std::move(b)) : tape.constant(std::move(b)));
    } else {
      out.biases.emplace_back(std::nullopt);
    }
  }
  return out;
}

TapeForward tape_forward(const TapeNetwork& net, ad::Var x, const std::vector<Matrix>* frozen_masks) {
  TapeForward out;
  out.inputs.push_back(x);
  const std::size_t depth = net.weights.size();
  if (frozen_masks && frozen_masks->size() + 1 != depth)
    throw std::invalid_argument("tape_forward: wrong number of frozen masks");
  ad::Var cur = x;
  for (std::size_t li = 0; li < depth; ++li) {
    ad::Var a = ad::matmul(cur, net.weights[li]);
    if (net.biases[li]) a = ad::add_row(a, *net.biases[li]);
    if (li + 1 < depth) {
      Matrix mask;
      if (frozen_masks) {
        mask = (*frozen_masks)[li];
      } else {
        mask = a.value();
        for (double& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
      }
      cur = ad::apply_mask(a, mask);
      out.masks.push_back(std::move(mask));
      out.inputs.push_back(cur);
    } else {
      out.logits = a;
    }
  }
  return out;
}

std::vector<Matrix> relu_masks(const MlpNetwork& net, const Matrix& x) {
  ad::Tape tape;
  const TapeNetwork tn = bind(tape, net, false);
  return tape_forward(tn, tape.constant(x)).masks;
}

GradientResult backprop(const MlpNetwork& net, const TapeObjective& objective) {
  ad::Tape tape;
  const TapeNetwork tn = bind(tape, net, true);
  const ad::Var loss = objective(tape, tn);
  GradientResult out;
  out.loss = loss.scalar();
  if (!std::isfinite(out.loss)) throw TrainingDiverged("non-finite loss in backprop");
  tape.backward(loss);
  out.gradient.reserve(net.parameter_count());
  for (std::size_t li = 0; li < net.depth(); ++li) {
    const Matrix gw = tape.gradient(tn.weights[li]);
    out.gradient.insert(out.gradient.end(), gw.data().begin(), gw.data().end());
    if (tn.biases[li]) {
      const Matrix gb = tape.gradient(*tn.biases[li]);
      out.gradient.insert(out.gradient.end(), gb.data().begin(), gb.data().end());
    }
  }
  return out;
}

double evaluate(const MlpNetwork& net, const TapeObjective& objective) {
  ad::Tape tape;
  const TapeNetwork tn = bind(tape, net, false);
  return objective(tape, tn).scalar();
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string& tok, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw std::runtime_error("checkpoint line " + std::to_string(line) + ": bad number '" + tok + "'");
  return v;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

void write_row(std::ostream& out, std::span<const double> row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ' ';
    out << format_double(row[i]);
  }
  out << '\n';
}

}  // namespace

void write_checkpoint(std::ostream& out, const MlpNetwork& net) {
  out << "TRHNET v1 " << net.depth() << '\n';
  for (std::size_t li = 0; li < net.depth(); ++li) {
    const DenseLayer& l = net.layer(li);
    out << "layer " << li << ' ' << l.in_dim() << ' ' << l.out_dim() << ' ' << (l.bias ? 1 : 0) << '\n';
    for (std::size_t r = 0; r < l.in_dim(); ++r) write_row(out, l.weights.row(r));
    if (l.bias) write_row(out, *l.bias);
  }
}

MlpNetwork read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: unexpected end of file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return split_ws(line);
  };
  auto header = next();
  if (header.size() != 3 || header[0] != "TRHNET" || header[1] != "v1")
    throw std::runtime_error("checkpoint: missing 'TRHNET v1' header");
  const std::size_t n = std::stoul(header[2]);
  std::vector<DenseLayer> layers;
  for (std::size_t li = 0; li < n; ++li) {
    auto h = next();
    if (h.size() != 5 || h[0] != "layer" || std::stoul(h[1]) != li)
      throw std::runtime_error("checkpoint line " + std::to_string(lineno) + ": bad layer header");
    const std::size_t din = std::stoul(h[2]);
    const std::size_t dout = std::stoul(h[3]);
    const bool has_bias = h[4] == "1";
    DenseLayer l;
    l.weights = Matrix(din, dout);
    for (std::size_t r = 0; r < din; ++r) {
      auto toks = next();
      if (toks.size() != dout)
        throw std::runtime_error("checkpoint line " + std::to_string(lineno) + ": expected " +
                                 std::to_string(dout) + " values");
      for (std::size_t c = 0; c < dout; ++c) l.weights(r, c) = parse_double(toks[c], lineno);
    }
    if (has_bias) {
      auto toks = next();
      if (toks.size() != dout)
        throw std::runtime_error("checkpoint line " + std::to_string(lineno) + ": bad bias row");
      Vector b(dout);
      for (std::size_t c = 0; c < dout; ++c) b[c] = parse_double(toks[c], lineno);
      l.bias = std::move(b);
    }
    layers.push_back(std::move(l));
  }
  return MlpNetwork(std::move(layers));
}

void save_checkpoint(const std::string& path, const MlpNetwork& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(out, net);
}

MlpNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace trh
