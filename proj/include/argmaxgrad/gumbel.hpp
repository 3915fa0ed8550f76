#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "argmaxgrad/rng.hpp"

namespace argmaxgrad {

/// Euler-Mascheroni constant; centering the standard Gumbel at -c makes the
/// perturbation zero-mean.
inline constexpr double kEulerGamma = 0.5772156649015329;

/// One i.i.d. zero-mean Gumbel variate per latent configuration (length k)
/// or per coordinate-state pair (length 2n for structured latents, laid out
/// values[2*i + b]).
struct GumbelDraw {
  std::vector<double> values;
  // Seed provenance: the stream position this draw came from.
  uint64_t stream_key = 0;
  uint64_t first_counter = 0;
};

/// Draws `count` variates as -log(-log(U)) - c, with U uniform on (0,1)
/// clamped away from 0 by 1e-300.
GumbelDraw sample_gumbel(int count, RngStream& rng);

/// Gumbel-Max sampler: argmax_i { logits[i] + gamma[i] }, ties toward the
/// lowest index. Sampling distribution is softmax(logits).
int gumbel_max_sample(std::span<const double> logits, const GumbelDraw& gamma);

/// Loss-perturbed argmax: argmax_i { eps*f[i] + logits[i] + gamma[i] }.
/// eps = 0 degenerates to gumbel_max_sample.
int perturbed_argmax(std::span<const double> logits,
                     std::span<const double> f_values, double eps,
                     const GumbelDraw& gamma);

/// Temperature-tau softmax over Gumbel-perturbed logits; returns a point on
/// the simplex (components positive, summing to 1).
std::vector<double> gumbel_softmax_relax(std::span<const double> logits,
                                         const GumbelDraw& gamma, double tau);

}  // namespace argmaxgrad
