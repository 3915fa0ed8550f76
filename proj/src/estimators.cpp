#include "argmaxgrad/estimators.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <ostream>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/numerics.hpp"

namespace argmaxgrad {

namespace {

using EMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;

void require_single_row(const Tensor& x, const char* op) {
  if (x.rows() != 1)
    throw ShapeError(std::string(op) + ": x must be a single example row");
}

/// F[i][z] = sum_c x(i,c) * L(z,c) - softplus(L(z,c)); the negative BCE of
/// decoder logits row z against image row i.
Tensor f_table_from_logits(const Tensor& X, const Tensor& L) {
  Tensor F = Tensor::zeros({X.rows(), L.rows()});
  Eigen::Map<EMat>(F.data.data(), F.rows(), F.cols()).noalias() =
      CMap(X.data.data(), X.rows(), X.cols()) *
      CMap(L.data.data(), L.rows(), L.cols()).transpose();
  for (int z = 0; z < L.rows(); ++z) {
    double sp = 0.0;
    for (int c = 0; c < L.cols(); ++c) sp += stable_softplus(L(z, c));
    for (int i = 0; i < X.rows(); ++i) F(i, z) -= sp;
  }
  return F;
}

struct EncoderPass {
  Tape tape;
  MlpNodes nodes;
  Tape::NodeId h = -1;
};

EncoderPass encode_log_q(const MlpParams& encoder, const Tensor& x) {
  EncoderPass p;
  p.nodes = forward_mlp(encoder, x, p.tape);
  p.h = p.tape.log_softmax(p.nodes.output);
  return p;
}

GradientMap backward_weighted(EncoderPass& p, const MlpParams& encoder,
                              Tensor weights) {
  const Tape::NodeId loss = p.tape.weighted_sum(p.h, std::move(weights));
  p.tape.backward(loss);
  return grads_of(p.tape, p.nodes, encoder);
}

}  // namespace

double EstimatorConfig::knob() const {
  switch (variant) {
    case EstimatorVariant::kDirect: return epsilon;
    case EstimatorVariant::kGsm: return tau;
    default: return 0.0;
  }
}

std::vector<double> decoder_f_table(const MlpParams& decoder, const Tensor& x,
                                    int k) {
  require_single_row(x, "decoder_f_table");
  const Tensor L = mlp_eval(decoder, Tensor::identity(k));
  if (L.cols() != x.cols())
    throw ShapeError("decoder_f_table: decoder output width " +
                     std::to_string(L.cols()) + " != pixel count " +
                     std::to_string(x.cols()));
  const Tensor F = f_table_from_logits(x, L);
  return {F.data.begin(), F.data.end()};
}

GradientMap unbiased_gradient(const MlpParams& encoder,
                              const MlpParams& decoder, const Tensor& x,
                              int k) {
  if (k != encoder.output_width())
    throw ContractError("unbiased_gradient: k = " + std::to_string(k) +
                        " != encoder output width " +
                        std::to_string(encoder.output_width()));
  require_single_row(x, "unbiased_gradient");
  EncoderPass p = encode_log_q(encoder, x);
  const Tensor& h = p.tape.value(p.h);
  const std::vector<double> f = decoder_f_table(decoder, x, k);
  Tensor w = Tensor::zeros({1, k});
  for (int z = 0; z < k; ++z) w[z] = std::exp(h[z]) * f[z];
  return backward_weighted(p, encoder, std::move(w));
}

GradientMap unbiased_gradient_mean(const MlpParams& encoder,
                                   const MlpParams& decoder, const Tensor& X) {
  GradientMap acc = GradientMap::zeros_like(encoder);
  Tensor row = Tensor::zeros({1, X.cols()});
  for (int i = 0; i < X.rows(); ++i) {
    for (int c = 0; c < X.cols(); ++c) row[c] = X(i, c);
    acc.add_scaled(
        unbiased_gradient(encoder, decoder, row, encoder.output_width()),
        1.0 / X.rows());
  }
  return acc;
}

GradientMap direct_gradient(const MlpParams& encoder, const MlpParams& decoder,
                            const Tensor& x, const GumbelDraw& gamma,
                            double eps) {
  if (!(eps > 0.0))
    throw DomainError(
        "direct_gradient: eps must be positive (the estimator is defined as "
        "an eps -> 0 limit)");
  require_single_row(x, "direct_gradient");
  const int k = encoder.output_width();
  EncoderPass p = encode_log_q(encoder, x);
  const Tensor& h = p.tape.value(p.h);
  const std::vector<double> f = decoder_f_table(decoder, x, k);

  const int z_star = gumbel_max_sample(h.row_span(0), gamma);
  const int z_eps = perturbed_argmax(h.row_span(0), f, eps, gamma);

  Tensor w = Tensor::zeros({1, k});
  w[z_eps] += 1.0 / eps;
  w[z_star] -= 1.0 / eps;
  return backward_weighted(p, encoder, std::move(w));
}

GradientMap gsm_gradient(const MlpParams& encoder, const MlpParams& decoder,
                         const Tensor& x, const GumbelDraw& gamma,
                         double tau) {
  if (!(tau > 0.0)) throw DomainError("gsm_gradient: tau must be positive");
  require_single_row(x, "gsm_gradient");
  const int k = encoder.output_width();
  if (gamma.values.size() != static_cast<size_t>(k))
    throw ContractError("gsm_gradient: gamma length mismatch");

  EncoderPass p = encode_log_q(encoder, x);
  Tensor g = Tensor::zeros({1, k});
  g.data.assign(gamma.values.begin(), gamma.values.end());
  const Tape::NodeId s = p.tape.softmax_tau(p.h, std::move(g), tau);
  const MlpNodes dec_nodes = forward_mlp_from(decoder, s, p.tape);
  const Tape::NodeId loss = p.tape.bce_with_logits(dec_nodes.output, x);
  p.tape.backward(loss);
  GradientMap grad = grads_of(p.tape, p.nodes, encoder);
  grad.scale(-1.0);  // loss is -f of the relaxed sample
  return grad;
}

GradientMap score_function_gradient(const MlpParams& encoder,
                                    const MlpParams& decoder, const Tensor& x,
                                    int z) {
  require_single_row(x, "score_function_gradient");
  const int k = encoder.output_width();
  if (z < 0 || z >= k)
    throw ContractError("score_function_gradient: z out of range");
  EncoderPass p = encode_log_q(encoder, x);
  const std::vector<double> f = decoder_f_table(decoder, x, k);
  Tensor w = Tensor::zeros({1, k});
  w[z] = f[z];
  return backward_weighted(p, encoder, std::move(w));
}

namespace {

/// One batched trial of the mean-over-rows estimate for a sampling variant.
std::vector<double> profile_trial(const MlpParams& encoder,
                                  const MlpParams& decoder, const Tensor& X,
                                  const Tensor& F, const EstimatorConfig& cfg,
                                  RngStream& rng) {
  const int B = X.rows();
  const int k = encoder.output_width();
  Tape tape;
  MlpNodes enc_nodes = forward_mlp(encoder, X, tape);
  const Tape::NodeId h = tape.log_softmax(enc_nodes.output);
  const Tensor& H = tape.value(h);

  switch (cfg.variant) {
    case EstimatorVariant::kDirect: {
      Tensor w = Tensor::zeros({B, k});
      for (int i = 0; i < B; ++i) {
        const GumbelDraw gamma = sample_gumbel(k, rng);
        const int z_star = gumbel_max_sample(H.row_span(i), gamma);
        const int z_eps =
            perturbed_argmax(H.row_span(i), F.row_span(i), cfg.epsilon, gamma);
        w(i, z_eps) += 1.0 / (cfg.epsilon * B);
        w(i, z_star) -= 1.0 / (cfg.epsilon * B);
      }
      tape.backward(tape.weighted_sum(h, std::move(w)));
      return grads_of(tape, enc_nodes, encoder).flatten();
    }
    case EstimatorVariant::kScoreFunction: {
      Tensor w = Tensor::zeros({B, k});
      for (int i = 0; i < B; ++i) {
        const GumbelDraw gamma = sample_gumbel(k, rng);
        const int z = gumbel_max_sample(H.row_span(i), gamma);
        w(i, z) += F(i, z) / B;
      }
      tape.backward(tape.weighted_sum(h, std::move(w)));
      return grads_of(tape, enc_nodes, encoder).flatten();
    }
    case EstimatorVariant::kGsm: {
      Tensor g = Tensor::zeros({B, k});
      for (int i = 0; i < B; ++i) {
        const GumbelDraw gamma = sample_gumbel(k, rng);
        for (int c = 0; c < k; ++c) g(i, c) = gamma.values[c];
      }
      const Tape::NodeId s = tape.softmax_tau(h, std::move(g), cfg.tau);
      const MlpNodes dec_nodes = forward_mlp_from(decoder, s, tape);
      std::vector<double> rw(static_cast<size_t>(B), 1.0 / B);
      tape.backward(tape.bce_with_logits(dec_nodes.output, X, std::move(rw)));
      GradientMap grad = grads_of(tape, enc_nodes, encoder);
      grad.scale(-1.0);
      return grad.flatten();
    }
    case EstimatorVariant::kUnbiasedEnum:
      return unbiased_gradient_mean(encoder, decoder, X).flatten();
  }
  throw ContractError("profile_trial: unknown variant");
}

}  // namespace

std::vector<GradientStats> bias_variance_profile(
    const MlpParams& encoder, const MlpParams& decoder, const Tensor& X,
    const std::vector<EstimatorConfig>& grid, const GradientMap& reference,
    int trials, RngStream& rng) {
  if (trials < 2)
    throw ContractError("bias_variance_profile: need at least 2 trials");
  const std::vector<double> ref = reference.flatten();

  // Decoder logits are parameter-frozen, so the per-image f tables are
  // computed once and shared across all trials.
  const Tensor L =
      mlp_eval(decoder, Tensor::identity(encoder.output_width()));
  const Tensor F = f_table_from_logits(X, L);

  std::vector<GradientStats> out;
  for (size_t gi = 0; gi < grid.size(); ++gi) {
    const EstimatorConfig& cfg = grid[gi];
    RngStream grid_rng = rng.substream(gi);

    std::vector<double> mean, m2;
    for (int t = 0; t < trials; ++t) {
      const std::vector<double> est =
          profile_trial(encoder, decoder, X, F, cfg, grid_rng);
      if (mean.empty()) {
        if (est.size() != ref.size())
          throw ContractError(
              "bias_variance_profile: reference size does not match the "
              "encoder gradient");
        mean.assign(est.size(), 0.0);
        m2.assign(est.size(), 0.0);
      }
      for (size_t c = 0; c < est.size(); ++c) {
        const double delta = est[c] - mean[c];
        mean[c] += delta / (t + 1);
        m2[c] += delta * (est[c] - mean[c]);
      }
    }

    GradientStats row;
    row.knob = cfg.knob();
    row.trials = trials;
    row.mean = mean;
    row.per_coord_std.resize(mean.size());
    double bias_sq = 0.0, std_sum = 0.0;
    for (size_t c = 0; c < mean.size(); ++c) {
      row.per_coord_std[c] = std::sqrt(m2[c] / (trials - 1));
      std_sum += row.per_coord_std[c];
      const double d = mean[c] - ref[c];
      bias_sq += d * d;
    }
    row.bias_l2 = std::sqrt(bias_sq);
    row.mean_std = std_sum / static_cast<double>(mean.size());

    double bias_var = 0.0, std_var = 0.0;
    for (size_t c = 0; c < mean.size(); ++c) {
      const double u = row.bias_l2 > 0.0 ? (mean[c] - ref[c]) / row.bias_l2 : 0.0;
      const double var_mean_c =
          row.per_coord_std[c] * row.per_coord_std[c] / trials;
      bias_var += u * u * var_mean_c;
      std_var += row.per_coord_std[c] * row.per_coord_std[c] /
                 (2.0 * (trials - 1));
    }
    row.bias_se = std::sqrt(bias_var);
    row.std_se = std::sqrt(std_var) / static_cast<double>(mean.size());
    out.push_back(std::move(row));
  }
  return out;
}

void write_gradient_stats_csv(std::ostream& os,
                              const std::vector<GradientStats>& rows) {
  os << "knob,bias_l2,mean_std,trials\n";
  char buf[160];
  for (const GradientStats& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%d\n", r.knob,
                  r.bias_l2, r.mean_std, r.trials);
    os << buf;
  }
}

void write_gradient_stats_csv(const std::string& path,
                              const std::vector<GradientStats>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path + " for writing");
  write_gradient_stats_csv(os, rows);
}

}  // namespace argmaxgrad
