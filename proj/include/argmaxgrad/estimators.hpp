#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "argmaxgrad/gumbel.hpp"
#include "argmaxgrad/mlp.hpp"
#include "argmaxgrad/tensor.hpp"

namespace argmaxgrad {

enum class EstimatorVariant { kUnbiasedEnum, kDirect, kGsm, kScoreFunction };

/// Estimator choice plus its bias knob: eps for the direct estimator, tau
/// for Gumbel-Softmax. Exactly one knob is consulted per variant.
struct EstimatorConfig {
  EstimatorVariant variant = EstimatorVariant::kDirect;
  double epsilon = 1.0;
  double tau = 1.0;
  int samples_per_step = 1;

  double knob() const;
};

/// Per-grid-point profile of a stochastic gradient estimate.
struct GradientStats {
  double knob = 0.0;
  std::vector<double> mean;           // mean gradient, flattened
  std::vector<double> per_coord_std;  // per-coordinate sample std
  double bias_l2 = 0.0;               // ||mean - reference||_2
  double mean_std = 0.0;              // average of per_coord_std
  int trials = 0;
  // Delta-method standard errors of the two summary statistics.
  double bias_se = 0.0;
  double std_se = 0.0;
};

/// f(x, z) = log p(x | z) for every one-hot z, via one batched decoder pass.
std::vector<double> decoder_f_table(const MlpParams& decoder, const Tensor& x,
                                    int k);

/// Exact gradient of E_{z~q}[f(x,z)] w.r.t. the encoder parameters by
/// enumerating all k latent assignments. q is the softmax of the encoder
/// output, f the negative reconstruction BCE.
GradientMap unbiased_gradient(const MlpParams& encoder,
                              const MlpParams& decoder, const Tensor& x,
                              int k);

/// Mean of unbiased_gradient over the rows of X, in row order. Used as the
/// deterministic reference for bias profiles.
GradientMap unbiased_gradient_mean(const MlpParams& encoder,
                                   const MlpParams& decoder, const Tensor& X);

/// Single-sample direct estimator: (grad h(x, z*(eps)) - grad h(x, z*)) / eps
/// with both argmaxes sharing the one Gumbel draw.
GradientMap direct_gradient(const MlpParams& encoder, const MlpParams& decoder,
                            const Tensor& x, const GumbelDraw& gamma,
                            double eps);

/// Gumbel-Softmax estimator: backpropagation through the temperature-tau
/// relaxation into the decoder; returns the gradient of the relaxed E[f].
GradientMap gsm_gradient(const MlpParams& encoder, const MlpParams& decoder,
                         const Tensor& x, const GumbelDraw& gamma, double tau);

/// Score-function (REINFORCE) estimator f(x,z) * grad log q(z|x), no
/// baseline; z must have been sampled from q.
GradientMap score_function_gradient(const MlpParams& encoder,
                                    const MlpParams& decoder, const Tensor& x,
                                    int z);

/// Monte-Carlo bias/variance profile of estimator configurations against a
/// fixed reference gradient, on the mean-over-rows objective of X.
/// `reference` must come from unbiased_gradient_mean at the same parameters.
std::vector<GradientStats> bias_variance_profile(
    const MlpParams& encoder, const MlpParams& decoder, const Tensor& X,
    const std::vector<EstimatorConfig>& grid, const GradientMap& reference,
    int trials, RngStream& rng);

/// CSV with header row: knob,bias_l2,mean_std,trials
void write_gradient_stats_csv(std::ostream& os,
                              const std::vector<GradientStats>& rows);
void write_gradient_stats_csv(const std::string& path,
                              const std::vector<GradientStats>& rows);

}  // namespace argmaxgrad
