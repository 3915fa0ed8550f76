#include "doctest.h"

#include <cmath>

#include "argmaxgrad/mlp.hpp"
#include "argmaxgrad/rng.hpp"
#include "oracles.hpp"

using namespace argmaxgrad;

TEST_SUITE_BEGIN("mlp");

TEST_CASE("identity single layer reproduces its input") {
  RngStream rng(1);
  MlpParams p = MlpParams::init({{2, 2, Activation::kIdentity}}, rng);
  p.weights[0] = Tensor::identity(2);
  p.biases[0] = Tensor::zeros({1, 2});
  Tape tape;
  const MlpNodes nodes = forward_mlp(p, Tensor::row({1.0, 2.0}), tape);
  CHECK(tape.value(nodes.output)[0] == 1.0);
  CHECK(tape.value(nodes.output)[1] == 2.0);
}

TEST_CASE("relu layer clips a negative pre-activation") {
  RngStream rng(1);
  MlpParams p = MlpParams::init({{1, 1, Activation::kRelu}}, rng);
  p.weights[0] = Tensor::row({2.0});
  p.biases[0] = Tensor::row({1.0});
  // pre-activation 2*(-3) + 1 = -5, clipped to 0.
  CHECK(mlp_eval(p, Tensor::row({-3.0}))[0] == 0.0);
}

TEST_CASE("random two-layer net matches a hand-rolled matrix oracle") {
  RngStream rng(5);
  MlpParams p = MlpParams::init(
      {{3, 4, Activation::kRelu}, {4, 2, Activation::kSigmoid}}, rng);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor x = Tensor::zeros({1, 3});
    oracle::fill_uniform(x, rng, -2.0, 2.0);
    const Tensor got = mlp_eval(p, x);

    // Dense matrix arithmetic, written out longhand.
    double h[4];
    for (int j = 0; j < 4; ++j) {
      double s = p.biases[0][j];
      for (int i = 0; i < 3; ++i) s += x[i] * p.weights[0](i, j);
      h[j] = s > 0.0 ? s : 0.0;
    }
    for (int o = 0; o < 2; ++o) {
      double s = p.biases[1][o];
      for (int j = 0; j < 4; ++j) s += h[j] * p.weights[1](j, o);
      const double want = 1.0 / (1.0 + std::exp(-s));
      CHECK(std::fabs(got[o] - want) < 1e-12);
    }
  }
}

TEST_CASE("shape errors name the offending layer") {
  RngStream rng(1);
  const MlpParams p = MlpParams::init(
      {{3, 4, Activation::kRelu}, {4, 2, Activation::kIdentity}}, rng);
  Tape tape;
  try {
    forward_mlp(p, Tensor::row({1.0, 2.0}), tape);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
  }
}

TEST_CASE("initialization respects the uniform glorot bound, zero biases") {
  RngStream rng(9);
  const MlpParams p = MlpParams::init({{30, 20, Activation::kRelu}}, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  double lo = 0.0, hi = 0.0;
  for (double v : p.weights[0].data) {
    CHECK(std::fabs(v) <= bound);
    lo = std::fmin(lo, v);
    hi = std::fmax(hi, v);
  }
  // Spread should fill most of the interval.
  CHECK(lo < -0.5 * bound);
  CHECK(hi > 0.5 * bound);
  for (double v : p.biases[0].data) CHECK(v == 0.0);
}

TEST_CASE("gradient of a full forward pass survives finite differences") {
  RngStream rng(13);
  MlpParams p = MlpParams::init(
      {{4, 5, Activation::kRelu}, {5, 3, Activation::kIdentity}}, rng);
  Tensor x = Tensor::zeros({2, 4});
  oracle::fill_uniform(x, rng, 0.1, 1.0);
  Tensor targets = Tensor::zeros({2, 3});
  oracle::fill_uniform(targets, rng, 0.1, 0.9);

  auto loss_value = [&] {
    Tape tape;
    const MlpNodes nodes = forward_mlp(p, x, tape);
    return tape.value(tape.bce_with_logits(nodes.output, targets))[0];
  };
  Tape tape;
  const MlpNodes nodes = forward_mlp(p, x, tape);
  tape.backward(tape.bce_with_logits(nodes.output, targets));
  const GradientMap g = grads_of(tape, nodes, p);

  const std::vector<double> fd = oracle::fd_gradient(p, loss_value);
  CHECK(oracle::max_rel_error(oracle::flatten_like_fd(g), fd, 1e-6) < 1e-6);
}

TEST_CASE("parameters unreachable from the loss get zero gradients") {
  RngStream rng(17);
  const MlpParams p = MlpParams::init({{2, 2, Activation::kIdentity}}, rng);
  Tape tape;
  const MlpNodes nodes = forward_mlp(p, Tensor::row({1.0, 1.0}), tape);
  // Loss ignores the network output entirely.
  const auto standalone = tape.leaf(Tensor::row({3.0}), true);
  tape.backward(tape.weighted_sum(standalone, Tensor::row({2.0})));
  const GradientMap g = grads_of(tape, nodes, p);
  for (const Tensor& t : g.weights)
    for (double v : t.data) CHECK(v == 0.0);
  CHECK(g.weights[0].rows() == 2);
}

TEST_CASE("adam and sgd apply deterministic updates") {
  RngStream rng(19);
  const MlpParams base = MlpParams::init({{2, 2, Activation::kIdentity}}, rng);
  GradientMap g = GradientMap::zeros_like(base);
  g.weights[0](0, 0) = 1.0;
  const double w0 = base.weights[0](0, 0);

  MlpParams a = base;
  SgdOptimizer sgd{0.1};
  sgd.step(a, g);
  CHECK(a.weights[0](0, 0) == doctest::Approx(w0 - 0.1).epsilon(1e-15));

  // First bias-corrected Adam step moves by lr * g/(|g| + eps) ~ lr.
  MlpParams b = base;
  AdamOptimizer adam;
  adam.lr = 0.1;
  adam.step(b, g);
  CHECK(std::fabs(b.weights[0](0, 0) - (w0 - 0.1)) < 1e-6);
  CHECK(b.weights[0](1, 1) == w0 * 0.0 + base.weights[0](1, 1));
}

TEST_SUITE_END();
