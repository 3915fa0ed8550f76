#include "argmaxgrad/mlp.hpp"

#include <cmath>
#include <string>

namespace argmaxgrad {

MlpParams MlpParams::init(std::vector<LayerSpec> specs, RngStream& rng) {
  for (size_t i = 0; i + 1 < specs.size(); ++i)
    if (specs[i].out != specs[i + 1].in)
      throw ShapeError("MlpParams: layer " + std::to_string(i) + " output " +
                       std::to_string(specs[i].out) + " != layer " +
                       std::to_string(i + 1) + " input " +
                       std::to_string(specs[i + 1].in));
  MlpParams p;
  p.layers = std::move(specs);
  for (const LayerSpec& l : p.layers) {
    Tensor w = Tensor::zeros({l.in, l.out});
    const double bound = std::sqrt(6.0 / (l.in + l.out));
    for (double& v : w.data) v = (2.0 * rng.next_uniform() - 1.0) * bound;
    p.weights.push_back(std::move(w));
    p.biases.push_back(Tensor::zeros({1, l.out}));
  }
  return p;
}

int64_t MlpParams::num_params() const {
  int64_t n = 0;
  for (size_t i = 0; i < weights.size(); ++i)
    n += weights[i].size() + biases[i].size();
  return n;
}

namespace {

Tape::NodeId apply_activation(Tape& tape, Tape::NodeId x, Activation act) {
  switch (act) {
    case Activation::kRelu: return tape.relu(x);
    case Activation::kSigmoid: return tape.sigmoid(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

}  // namespace

MlpNodes forward_mlp_from(const MlpParams& params, Tape::NodeId input,
                          Tape& tape) {
  MlpNodes nodes;
  nodes.input = input;
  Tape::NodeId x = input;
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const LayerSpec& l = params.layers[i];
    if (tape.value(x).cols() != l.in)
      throw ShapeError("forward_mlp: layer " + std::to_string(i) +
                       " expects input width " + std::to_string(l.in) +
                       ", got " + std::to_string(tape.value(x).cols()));
    nodes.weights.push_back(tape.leaf(params.weights[i], true));
    nodes.biases.push_back(tape.leaf(params.biases[i], true));
    x = tape.add_bias(tape.matmul(x, nodes.weights[i]), nodes.biases[i]);
    x = apply_activation(tape, x, l.act);
  }
  nodes.output = x;
  return nodes;
}

MlpNodes forward_mlp(const MlpParams& params, const Tensor& input,
                     Tape& tape) {
  return forward_mlp_from(params, tape.leaf(input, false), tape);
}

Tensor mlp_eval(const MlpParams& params, const Tensor& input) {
  Tape tape;
  MlpNodes n = forward_mlp(params, input, tape);
  return tape.value(n.output);
}

GradientMap GradientMap::zeros_like(const MlpParams& p) {
  GradientMap g;
  for (size_t i = 0; i < p.weights.size(); ++i) {
    g.weights.push_back(Tensor::zeros(p.weights[i].shape));
    g.biases.push_back(Tensor::zeros(p.biases[i].shape));
  }
  return g;
}

void GradientMap::add_scaled(const GradientMap& o, double c) {
  for (size_t i = 0; i < weights.size(); ++i) {
    for (int64_t j = 0; j < weights[i].size(); ++j)
      weights[i][j] += c * o.weights[i][j];
    for (int64_t j = 0; j < biases[i].size(); ++j)
      biases[i][j] += c * o.biases[i][j];
  }
}

void GradientMap::scale(double c) {
  for (auto& t : weights)
    for (double& v : t.data) v *= c;
  for (auto& t : biases)
    for (double& v : t.data) v *= c;
}

double GradientMap::squared_norm() const {
  double s = 0.0;
  for (const auto& t : weights)
    for (double v : t.data) s += v * v;
  for (const auto& t : biases)
    for (double v : t.data) s += v * v;
  return s;
}

int64_t GradientMap::size() const {
  int64_t n = 0;
  for (const auto& t : weights) n += t.size();
  for (const auto& t : biases) n += t.size();
  return n;
}

std::vector<double> GradientMap::flatten() const {
  std::vector<double> out;
  out.reserve(static_cast<size_t>(size()));
  for (const auto& t : weights) out.insert(out.end(), t.data.begin(), t.data.end());
  for (const auto& t : biases) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

GradientMap grads_of(const Tape& tape, const MlpNodes& nodes,
                     const MlpParams& params) {
  GradientMap g;
  g.weights.reserve(params.weights.size());
  g.biases.reserve(params.biases.size());
  for (size_t i = 0; i < params.weights.size(); ++i) {
    g.weights.push_back(tape.grad(nodes.weights[i]));
    g.biases.push_back(tape.grad(nodes.biases[i]));
  }
  return g;
}

void SgdOptimizer::step(MlpParams& p, const GradientMap& g) {
  for (size_t i = 0; i < p.weights.size(); ++i) {
    for (int64_t j = 0; j < p.weights[i].size(); ++j)
      p.weights[i][j] -= lr * g.weights[i][j];
    for (int64_t j = 0; j < p.biases[i].size(); ++j)
      p.biases[i][j] -= lr * g.biases[i][j];
  }
}

void AdamOptimizer::step(MlpParams& p, const GradientMap& g) {
  if (m.weights.empty()) {
    m = GradientMap::zeros_like(p);
    v = GradientMap::zeros_like(p);
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  auto update = [&](Tensor& param, Tensor& mi, Tensor& vi, const Tensor& gi) {
    for (int64_t j = 0; j < param.size(); ++j) {
      mi[j] = beta1 * mi[j] + (1.0 - beta1) * gi[j];
      vi[j] = beta2 * vi[j] + (1.0 - beta2) * gi[j] * gi[j];
      param[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + eps);
    }
  };
  for (size_t i = 0; i < p.weights.size(); ++i) {
    update(p.weights[i], m.weights[i], v.weights[i], g.weights[i]);
    update(p.biases[i], m.biases[i], v.biases[i], g.biases[i]);
  }
}

}  // namespace argmaxgrad
