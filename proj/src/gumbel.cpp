#include "argmaxgrad/gumbel.hpp"

#include <cmath>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/numerics.hpp"

namespace argmaxgrad {

GumbelDraw sample_gumbel(int count, RngStream& rng) {
  if (count <= 0) throw ContractError("sample_gumbel: count must be positive");
  GumbelDraw d;
  d.stream_key = rng.key();
  d.first_counter = rng.counter();
  d.values.resize(static_cast<size_t>(count));
  for (double& v : d.values) {
    const double u = std::fmax(rng.next_uniform(), 1e-300);
    v = -std::log(-std::log(u)) - kEulerGamma;
  }
  return d;
}

int gumbel_max_sample(std::span<const double> logits,
                      const GumbelDraw& gamma) {
  if (logits.empty()) throw ContractError("gumbel_max_sample: empty logits");
  if (logits.size() != gamma.values.size())
    throw ContractError("gumbel_max_sample: logits/gamma length mismatch");
  int best = 0;
  double best_v = logits[0] + gamma.values[0];
  for (size_t i = 1; i < logits.size(); ++i) {
    const double v = logits[i] + gamma.values[i];
    if (v > best_v) {
      best = static_cast<int>(i);
      best_v = v;
    }
  }
  return best;
}

int perturbed_argmax(std::span<const double> logits,
                     std::span<const double> f_values, double eps,
                     const GumbelDraw& gamma) {
  if (logits.empty()) throw ContractError("perturbed_argmax: empty logits");
  if (logits.size() != f_values.size() ||
      logits.size() != gamma.values.size())
    throw ContractError("perturbed_argmax: length mismatch");
  if (eps < 0.0) throw ContractError("perturbed_argmax: eps must be >= 0");
  int best = 0;
  double best_v = eps * f_values[0] + logits[0] + gamma.values[0];
  for (size_t i = 1; i < logits.size(); ++i) {
    const double v = eps * f_values[i] + logits[i] + gamma.values[i];
    if (v > best_v) {
      best = static_cast<int>(i);
      best_v = v;
    }
  }
  return best;
}

std::vector<double> gumbel_softmax_relax(std::span<const double> logits,
                                         const GumbelDraw& gamma, double tau) {
  if (!(tau > 0.0)) throw DomainError("gumbel_softmax_relax: tau must be > 0");
  if (logits.size() != gamma.values.size())
    throw ContractError("gumbel_softmax_relax: length mismatch");
  std::vector<double> out(logits.size());
  double m = -HUGE_VAL;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = (logits[i] + gamma.values[i]) / tau;
    m = std::fmax(m, out[i]);
  }
  double s = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : out) v /= s;
  return out;
}

}  // namespace argmaxgrad
