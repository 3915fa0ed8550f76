#pragma once

#include <vector>

#include "argmaxgrad/rng.hpp"
#include "argmaxgrad/tensor.hpp"

namespace argmaxgrad {

enum class Activation { kRelu, kIdentity, kSigmoid };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
};

/// Fully-connected network parameters: per-layer weight [in,out] and bias
/// [1,out]. Weights initialize Uniform(+-sqrt(6/(fan_in+fan_out))), biases 0.
struct MlpParams {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static MlpParams init(std::vector<LayerSpec> specs, RngStream& rng);

  int input_width() const { return layers.empty() ? 0 : layers.front().in; }
  int output_width() const { return layers.empty() ? 0 : layers.back().out; }
  int64_t num_params() const;
};

/// Node ids of one recorded forward pass; weight/bias leaves carry gradients.
struct MlpNodes {
  std::vector<Tape::NodeId> weights;
  std::vector<Tape::NodeId> biases;
  Tape::NodeId input = -1;
  Tape::NodeId output = -1;
};

/// Records the network on the tape and returns its node handles.
/// `input` is [batch, input_width]; throws ShapeError naming the offending
/// layer on width mismatch.
MlpNodes forward_mlp(const MlpParams& params, const Tensor& input, Tape& tape);

/// Same forward pass continuing from an existing tape node as input.
MlpNodes forward_mlp_from(const MlpParams& params, Tape::NodeId input,
                          Tape& tape);

/// Plain forward evaluation without recording (inference paths).
Tensor mlp_eval(const MlpParams& params, const Tensor& input);

/// Per-parameter gradients aligned with an MlpParams layout.
struct GradientMap {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static GradientMap zeros_like(const MlpParams& p);

  void add_scaled(const GradientMap& o, double c);
  void scale(double c);
  double squared_norm() const;
  int64_t size() const;
  std::vector<double> flatten() const;
};

/// Gradients recorded by the tape for one forward pass; parameters the
/// backward sweep never reached come back as zeros.
GradientMap grads_of(const Tape& tape, const MlpNodes& nodes,
                     const MlpParams& params);

struct SgdOptimizer {
  double lr = 1e-3;
  void step(MlpParams& p, const GradientMap& g);
};

struct AdamOptimizer {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
  GradientMap m, v;

  void step(MlpParams& p, const GradientMap& g);
};

}  // namespace argmaxgrad
