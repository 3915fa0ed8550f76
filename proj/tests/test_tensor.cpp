#include "doctest.h"

#include <cmath>
#include <functional>
#include <vector>

#include "argmaxgrad/numerics.hpp"
#include "argmaxgrad/rng.hpp"
#include "argmaxgrad/tensor.hpp"
#include "oracles.hpp"

using argmaxgrad::ContractError;
using argmaxgrad::DomainError;
using argmaxgrad::NumericError;
using argmaxgrad::RngStream;
using argmaxgrad::Tape;
using argmaxgrad::Tensor;

namespace {

/// Builds a scalar graph over one input tensor and returns (value, grad-x).
struct OpProbe {
  std::function<Tape::NodeId(Tape&, Tape::NodeId)> build;

  double value(const Tensor& x) const {
    Tape tape;
    const Tape::NodeId in = tape.leaf(x, true);
    return tape.value(build(tape, in))[0];
  }
  Tensor grad(const Tensor& x) const {
    Tape tape;
    const Tape::NodeId in = tape.leaf(x, true);
    tape.backward(build(tape, in));
    return tape.grad(in);
  }
};

/// Central-difference check of an OpProbe on one input.
double probe_max_rel_error(const OpProbe& p, Tensor x, double step = 1e-5) {
  const Tensor g = p.grad(x);
  std::vector<double> fd(x.data.size());
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + step;
    const double up = p.value(x);
    x.data[i] = keep - step;
    const double down = p.value(x);
    x.data[i] = keep;
    fd[i] = (up - down) / (2.0 * step);
  }
  return oracle::max_rel_error(g.data, fd, 1e-6);
}

Tensor random_tensor(std::vector<int> shape, RngStream& rng, double lo,
                     double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  oracle::fill_uniform(t, rng, lo, hi);
  return t;
}

Tensor random_weights(std::vector<int> shape, RngStream& rng) {
  return random_tensor(std::move(shape), rng, -1.0, 1.0);
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul forward matches the naive triple loop") {
  RngStream rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    const int r = 2 + static_cast<int>(rng.next_u64() % 4);
    const int k = 2 + static_cast<int>(rng.next_u64() % 4);
    const int c = 2 + static_cast<int>(rng.next_u64() % 4);
    const Tensor a = random_weights({r, k}, rng);
    const Tensor b = random_weights({k, c}, rng);
    Tape tape;
    const auto prod =
        tape.value(tape.matmul(tape.leaf(a, false), tape.leaf(b, false)));
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) {
        double want = 0.0;
        for (int t = 0; t < k; ++t) want += a(i, t) * b(t, j);
        CHECK(prod(i, j) == doctest::Approx(want).epsilon(1e-12));
      }
  }
}

TEST_CASE("backward of a plain dot product returns the other factor") {
  // loss = w . x with x=[3], w=[5]: d loss / d w = 3.
  Tape tape;
  const auto w = tape.leaf(Tensor::row({5.0}), true);
  const auto x = tape.leaf(Tensor::row({3.0}), false);
  const auto loss = tape.weighted_sum(tape.matmul(w, x), Tensor::row({1.0}));
  // matmul of [1,1] x [1,1]; use x as the left input so shapes line up
  tape.backward(loss);
  CHECK(tape.grad(w)[0] == 3.0);
}

TEST_CASE("dead relu has exactly zero gradient") {
  // loss = relu(w*x) with pre-activation -15: gradient must be exactly 0.
  Tape tape;
  const auto w = tape.leaf(Tensor::row({5.0}), true);
  const auto x = tape.leaf(Tensor::row({-3.0}), false);
  const auto pre = tape.matmul(x, w);  // [1,1] * [1,1] -> -15
  const auto loss = tape.weighted_sum(tape.relu(pre), Tensor::row({1.0}));
  CHECK(tape.value(loss)[0] == 0.0);
  tape.backward(loss);
  CHECK(tape.grad(w)[0] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss nodes") {
  Tape tape;
  const auto a = tape.leaf(Tensor::row({1.0, 2.0}), true);
  const auto b = tape.relu(a);
  CHECK_THROWS_AS(tape.backward(b), ContractError);
}

TEST_CASE("bce examples: symmetric point, saturated prediction") {
  Tape tape;
  const auto l0 = tape.leaf(Tensor::row({0.0}), false);
  const auto sym = tape.bce_with_logits(l0, Tensor::row({0.5}));
  CHECK(tape.value(sym)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const auto l30 = tape.leaf(Tensor::row({30.0}), false);
  const auto sat = tape.bce_with_logits(l30, Tensor::row({1.0}));
  CHECK(tape.value(sat)[0] >= 0.0);
  CHECK(tape.value(sat)[0] <= 1e-12);
}

TEST_CASE("bce matches the extended-precision unstable formula") {
  RngStream rng(21);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor logits = random_tensor({1, 10}, rng, -8.0, 8.0);
    const Tensor targets = random_tensor({1, 10}, rng, 0.0, 1.0);
    Tape tape;
    const auto node =
        tape.bce_with_logits(tape.leaf(logits, false), targets);
    const long double want = oracle::bce_unstable_ld(logits.data, targets.data);
    CHECK(std::fabs(tape.value(node)[0] - static_cast<double>(want)) <
          1e-10 * std::fmax(1.0, std::fabs(static_cast<double>(want))));
  }
}

TEST_CASE("bce rejects targets outside [0,1]") {
  Tape tape;
  const auto l = tape.leaf(Tensor::row({0.0}), false);
  CHECK_THROWS_AS(tape.bce_with_logits(l, Tensor::row({1.5})), DomainError);
  CHECK_THROWS_AS(tape.bce_with_logits(l, Tensor::row({-0.1})), DomainError);
}

TEST_CASE("bce gradient at logits 0, targets 0.5 is exactly zero") {
  Tape tape;
  const auto l = tape.leaf(Tensor::zeros({1, 4}), true);
  tape.backward(tape.bce_with_logits(l, Tensor::full({1, 4}, 0.5)));
  for (double g : tape.grad(l).data) CHECK(g == 0.0);
}

TEST_CASE("log_softmax examples: symmetry and the 1000-logit stability case") {
  Tape tape;
  const auto sym =
      tape.log_softmax(tape.leaf(Tensor::row({0.0, 0.0}), false));
  CHECK(tape.value(sym)[0] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(tape.value(sym)[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-14));

  const auto big =
      tape.log_softmax(tape.leaf(Tensor::row({1000.0, 0.0}), false));
  CHECK(tape.value(big)[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(tape.value(big)[1] == doctest::Approx(-1000.0).epsilon(1e-12));
}

TEST_CASE("log_softmax: normalization, shift invariance, oracle agreement") {
  RngStream rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor logits = random_tensor({1, 7}, rng, -5.0, 5.0);
    Tape tape;
    const Tensor h =
        tape.value(tape.log_softmax(tape.leaf(logits, false)));

    double mass = 0.0;
    for (double v : h.data) mass += std::exp(v);
    CHECK(std::fabs(mass - 1.0) < 1e-12);

    Tensor shifted = logits;
    for (double& v : shifted.data) v += 123.456;
    const Tensor h2 =
        tape.value(tape.log_softmax(tape.leaf(shifted, false)));
    for (int i = 0; i < 7; ++i) CHECK(std::fabs(h[i] - h2[i]) < 1e-12);

    const auto want = oracle::log_softmax_ld(logits.data);
    for (int i = 0; i < 7; ++i)
      CHECK(std::fabs(h[i] - static_cast<double>(want[i])) < 1e-12);
  }
}

TEST_CASE("finite differences validate every primitive's backward") {
  RngStream rng(41);
  Tensor w34 = random_weights({3, 4}, rng);
  Tensor wsum24 = random_weights({2, 4}, rng);
  Tensor wsum23 = random_weights({2, 3}, rng);
  Tensor wsum22 = random_weights({2, 2}, rng);
  Tensor bias3 = random_weights({1, 3}, rng);
  Tensor gamma23 = random_weights({2, 3}, rng);
  Tensor targets23 = random_tensor({2, 3}, rng, 0.05, 0.95);

  const std::vector<std::pair<const char*, OpProbe>> probes = {
      {"matmul", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.matmul(x, t.leaf(w34, false)), wsum24);
       }}},
      {"add_bias", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.add_bias(x, t.leaf(bias3, false)), wsum23);
       }}},
      {"relu", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.relu(x), wsum23);
       }}},
      {"sigmoid", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.sigmoid(x), wsum23);
       }}},
      {"softplus", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.softplus(x), wsum23);
       }}},
      {"log_softmax", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.log_softmax(x), wsum23);
       }}},
      {"softmax_tau", {[&](Tape& t, Tape::NodeId x) {
         return t.weighted_sum(t.softmax_tau(x, gamma23, 0.7), wsum23);
       }}},
      {"bce", {[&](Tape& t, Tape::NodeId x) {
         return t.bce_with_logits(x, targets23, {0.5, 2.0});
       }}},
      {"slice+add", {[&](Tape& t, Tape::NodeId x) {
         const auto a = t.slice_cols(x, 0, 2);
         const auto b = t.slice_cols(x, 1, 2);
         return t.weighted_sum(t.add(a, b), wsum22);
       }}},
  };

  for (const auto& [name, probe] : probes) {
    CAPTURE(name);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      // Keep relu inputs away from the kink.
      Tensor x = random_tensor({2, 3}, rng, 0.1, 2.0);
      if (rep % 2)
        for (double& v : x.data) v = -v;
      worst = std::fmax(worst, probe_max_rel_error(probe, x));
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("two-layer chain passes finite differences end to end") {
  RngStream rng(51);
  const Tensor w1 = random_weights({3, 4}, rng);
  const Tensor b1 = random_weights({1, 4}, rng);
  const Tensor w2 = random_weights({4, 2}, rng);
  const Tensor b2 = random_weights({1, 2}, rng);
  const Tensor targets = random_tensor({2, 2}, rng, 0.1, 0.9);

  const OpProbe probe{[&](Tape& t, Tape::NodeId x) {
    auto h = t.relu(t.add_bias(t.matmul(x, t.leaf(w1, false)),
                               t.leaf(b1, false)));
    auto out = t.add_bias(t.matmul(h, t.leaf(w2, false)), t.leaf(b2, false));
    return t.bce_with_logits(out, targets);
  }};
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor x = random_tensor({2, 3}, rng, 0.2, 1.5);
    CHECK(probe_max_rel_error(probe, x) < 1e-6);
  }
}

TEST_CASE("identical graphs produce bit-identical values and gradients") {
  RngStream rng(61);
  const Tensor x = random_tensor({3, 4}, rng, -1.0, 1.0);
  const Tensor w = random_weights({4, 5}, rng);
  const Tensor ws = random_weights({3, 5}, rng);
  auto run = [&] {
    Tape tape;
    const auto in = tape.leaf(x, true);
    const auto loss =
        tape.weighted_sum(tape.sigmoid(tape.matmul(in, tape.leaf(w, true))), ws);
    tape.backward(loss);
    return std::pair{tape.value(loss)[0], tape.grad(in).data};
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("non-finite forward results raise NumericError") {
  Tape tape;
  const auto big = tape.leaf(Tensor::full({1, 2}, 1e308), false);
  CHECK_THROWS_AS(tape.matmul(big, tape.leaf(Tensor::full({2, 2}, 1e308), false)),
                  NumericError);
}

TEST_SUITE_END();
