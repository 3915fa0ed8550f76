#include "argmaxgrad/dvae.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/numerics.hpp"

namespace argmaxgrad {

namespace {

// RngStream ids.
constexpr uint64_t kInitStream = 1;
constexpr uint64_t kGumbelStream = 2;
constexpr uint64_t kEvalStream = 3;

std::vector<PairwiseEdge> edge_list(int n) {
  std::vector<PairwiseEdge> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) edges.push_back({i, j, 0.0});
  return edges;
}

Tensor one_hot_row(int z, int k) {
  Tensor t = Tensor::zeros({1, k});
  t[z] = 1.0;
  return t;
}

double f_value(const MlpParams& decoder, const Tensor& latent_input,
               const Tensor& x) {
  const Tensor logits = mlp_eval(decoder, latent_input);
  double f = 0.0;
  for (int c = 0; c < logits.cols(); ++c)
    f += x[c] * logits[c] - stable_softplus(logits[c]);
  return f;
}

Assignment solve_map(const PairwisePotentials& p, const GumbelDraw* gamma) {
  return p.supermodular() ? maxflow_map(p, gamma) : brute_force_map(p, gamma);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "sigmoid") return Activation::kSigmoid;
  if (s == "identity") return Activation::kIdentity;
  throw ParseError("unknown activation: " + s);
}

}  // namespace

int LatentSpec::decoder_input_width() const {
  return kind == Kind::kCategorical ? k : 2 * n;
}

int LatentSpec::num_edges() const {
  if (kind == Kind::kCategorical || pairwise == PairwiseMode::kNone) return 0;
  return n * (n - 1) / 2;
}

int LatentSpec::encoder_output_width() const {
  return kind == Kind::kCategorical ? k : 2 * n + num_edges();
}

DvaeModel DvaeModel::categorical(int input_dim, int hidden, int k,
                                 RngStream& rng) {
  DvaeModel m;
  m.latent.kind = LatentSpec::Kind::kCategorical;
  m.latent.k = k;
  // Independent init streams keep the decoder draw identical across
  // encoder variants of the same seed.
  RngStream enc_init = rng.substream(kInitStream).substream(1);
  RngStream dec_init = rng.substream(kInitStream).substream(2);
  m.encoder = MlpParams::init(
      {{input_dim, hidden, Activation::kRelu}, {hidden, k}}, enc_init);
  m.decoder = MlpParams::init(
      {{k, hidden, Activation::kRelu}, {hidden, input_dim}}, dec_init);
  return m;
}

DvaeModel DvaeModel::structured(int input_dim, int hidden, int n,
                                PairwiseMode pairwise, RngStream& rng) {
  DvaeModel m;
  m.latent.kind = LatentSpec::Kind::kStructured;
  m.latent.n = n;
  m.latent.pairwise = pairwise;
  RngStream enc_init = rng.substream(kInitStream).substream(1);
  RngStream dec_init = rng.substream(kInitStream).substream(2);
  m.encoder = MlpParams::init(
      {{input_dim, hidden, Activation::kRelu},
       {hidden, m.latent.encoder_output_width()}},
      enc_init);
  m.decoder = MlpParams::init(
      {{2 * n, hidden, Activation::kRelu}, {hidden, input_dim}}, dec_init);
  return m;
}

PairwisePotentials DvaeModel::potentials_from_row(
    std::span<const double> row) const {
  if (latent.kind != LatentSpec::Kind::kStructured)
    throw ContractError("potentials_from_row: latent is not structured");
  const int n = latent.n;
  PairwisePotentials p = PairwisePotentials::make(n);
  for (int i = 0; i < n; ++i) {
    p.unary(i, 0) = row[2 * i];
    p.unary(i, 1) = row[2 * i + 1];
  }
  if (latent.pairwise != PairwiseMode::kNone) {
    p.edges = edge_list(n);
    for (size_t e = 0; e < p.edges.size(); ++e) {
      const double raw = row[2 * n + e];
      p.edges[e].alpha = latent.pairwise == PairwiseMode::kSupermodular
                             ? stable_softplus(raw)
                             : raw;
    }
  }
  return p;
}

double kl_categorical_uniform(std::span<const double> log_probs) {
  double mass = 0.0;
  for (double h : log_probs) mass += std::exp(h);
  if (std::fabs(mass - 1.0) > 1e-9)
    throw ContractError(
        "kl_categorical_uniform: input is not normalized (sum of "
        "exponentials = " +
        std::to_string(mass) + ")");
  double s = 0.0;
  for (double h : log_probs) s += std::exp(h) * h;
  return std::fmax(s + std::log(static_cast<double>(log_probs.size())), 0.0);
}

double elbo(const DvaeModel& model, const Tensor& x, int z, double kl_value) {
  if (model.latent.kind != LatentSpec::Kind::kCategorical)
    throw ContractError("elbo: categorical sample for a structured model");
  if (z < 0 || z >= model.latent.k)
    throw DomainError("elbo: z out of range");
  return -f_value(model.decoder, one_hot_row(z, model.latent.k), x) + kl_value;
}

double elbo(const DvaeModel& model, const Tensor& x, const Assignment& z,
            double kl_value) {
  if (model.latent.kind != LatentSpec::Kind::kStructured)
    throw ContractError("elbo: structured sample for a categorical model");
  if (z.n() != model.latent.n)
    throw DomainError("elbo: assignment length mismatch");
  return -f_value(model.decoder, two_hot(z), x) + kl_value;
}

double annealed_knob(double knob0, int64_t step, const TrainConfig& config) {
  const int64_t floored = (step / config.anneal_period) * config.anneal_period;
  return std::fmax(config.epsilon_min,
                   knob0 * std::exp(-config.anneal_rate *
                                    static_cast<double>(floored)));
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(DvaeModel model, TrainConfig config)
    : model_(std::move(model)), config_(std::move(config)) {
  const LatentSpec& ls = model_.latent;
  if (model_.encoder.output_width() != ls.encoder_output_width())
    throw ConfigError("encoder output width " +
                      std::to_string(model_.encoder.output_width()) +
                      " does not match the latent spec (" +
                      std::to_string(ls.encoder_output_width()) + ")");
  if (model_.decoder.input_width() != ls.decoder_input_width())
    throw ConfigError("decoder input width mismatch with the latent spec");

  const EstimatorVariant v = config_.estimator.variant;
  if (ls.kind == LatentSpec::Kind::kStructured &&
      v == EstimatorVariant::kGsm)
    throw ConfigError(
        "a structured encoder cannot be trained with GSM: the softmax "
        "normalization sums over all 2^n latent assignments");
  if (ls.kind == LatentSpec::Kind::kStructured &&
      v != EstimatorVariant::kDirect)
    throw ConfigError(
        "structured latents support only the direct estimator");
  if (v == EstimatorVariant::kDirect && !(config_.estimator.epsilon > 0.0))
    throw ConfigError("direct estimator requires epsilon > 0");
  if (v == EstimatorVariant::kGsm && !(config_.estimator.tau > 0.0))
    throw ConfigError("gsm estimator requires tau > 0");
  if (config_.batch_size < 1) throw ConfigError("batch_size must be >= 1");

  adam_enc_.lr = adam_dec_.lr = config_.learning_rate;
  sgd_.lr = config_.learning_rate;
}

double Trainer::current_knob() const {
  const EstimatorConfig& e = config_.estimator;
  // Only the direct and GSM estimators carry a bias knob to anneal.
  if (e.variant == EstimatorVariant::kDirect)
    return annealed_knob(e.epsilon, step_, config_);
  if (e.variant == EstimatorVariant::kGsm)
    return annealed_knob(e.tau, step_, config_);
  return 0.0;
}

Trainer::BatchGrads Trainer::categorical_grads(const Tensor& batch,
                                               double knob,
                                               std::span<const int> labels) {
  const int B = batch.rows();
  const int k = model_.latent.k;
  const EstimatorVariant variant = config_.estimator.variant;
  const double sup_w =
      config_.supervision ? config_.supervision->weight : 1.0;

  RngStream gum =
      RngStream(config_.seed, kGumbelStream).substream(
          static_cast<uint64_t>(step_));

  Tape tape;
  MlpNodes enc_nodes = forward_mlp(model_.encoder, batch, tape);
  const Tape::NodeId h = tape.log_softmax(enc_nodes.output);
  const Tensor& H = tape.value(h);

  // Shared f table: the decoder applied to every one-hot latent.
  const Tensor L = mlp_eval(model_.decoder, Tensor::identity(k));
  std::vector<double> sp(static_cast<size_t>(k), 0.0);
  for (int z = 0; z < k; ++z)
    for (int c = 0; c < L.cols(); ++c) sp[z] += stable_softplus(L(z, c));
  Tensor F = Tensor::zeros({B, k});
  for (int i = 0; i < B; ++i)
    for (int z = 0; z < k; ++z) {
      double dot = 0.0;
      for (int c = 0; c < L.cols(); ++c) dot += batch(i, c) * L(z, c);
      F(i, z) = dot - sp[z];
    }

  Tensor w_phi = Tensor::zeros({B, k});
  std::vector<double> theta_w(static_cast<size_t>(k), 0.0);
  Tensor theta_sum = Tensor::zeros({k, batch.cols()});
  double elbo_acc = 0.0;

  Tape dec_tape;  // separate graph: decoder applied to the k one-hots
  MlpNodes dec_nodes = forward_mlp(model_.decoder, Tensor::identity(k), dec_tape);

  for (int i = 0; i < B; ++i) {
    const std::span<const double> h_row = H.row_span(i);
    const double kl = kl_categorical_uniform(h_row);

    // Analytic KL gradient through the normalized log-probabilities:
    // d/dh_j of (sum_z e^h h + log k) = e^{h_j} (h_j + 1).
    for (int j = 0; j < k; ++j)
      w_phi(i, j) += std::exp(H(i, j)) * (H(i, j) + 1.0) / B;

    auto group_theta = [&](int z, double weight) {
      theta_w[z] += weight / B;
      for (int c = 0; c < batch.cols(); ++c)
        theta_sum(z, c) += weight * batch(i, c);
    };

    switch (variant) {
      case EstimatorVariant::kDirect: {
        const GumbelDraw gamma = sample_gumbel(k, gum);
        const int z_star = gumbel_max_sample(h_row, gamma);
        int z_eps;
        double w = 1.0;
        if (!labels.empty()) {
          // Supervised sample: the perturbed label is the true label.
          z_eps = labels[i];
          if (z_eps < 0 || z_eps >= k)
            throw DomainError("semi_supervised_step: label out of range");
          w = sup_w;
        } else {
          z_eps = perturbed_argmax(h_row, F.row_span(i), knob, gamma);
        }
        w_phi(i, z_eps) -= w / (B * knob);
        w_phi(i, z_star) += w / (B * knob);
        group_theta(z_star, 1.0);
        elbo_acc += -F(i, z_star) + kl;
        break;
      }
      case EstimatorVariant::kUnbiasedEnum: {
        double expected_f = 0.0;
        for (int z = 0; z < k; ++z) {
          const double q = std::exp(H(i, z));
          w_phi(i, z) -= q * F(i, z) / B;
          group_theta(z, q);
          expected_f += q * F(i, z);
        }
        elbo_acc += -expected_f + kl;
        break;
      }
      case EstimatorVariant::kScoreFunction: {
        const GumbelDraw gamma = sample_gumbel(k, gum);
        const int z = gumbel_max_sample(h_row, gamma);
        w_phi(i, z) -= F(i, z) / B;
        group_theta(z, 1.0);
        elbo_acc += -F(i, z) + kl;
        break;
      }
      case EstimatorVariant::kGsm:
        throw ConfigError("gsm step dispatched to the wrong path");
    }
  }

  Tensor theta_targets = Tensor::full({k, batch.cols()}, 0.5);
  for (int z = 0; z < k; ++z) {
    if (theta_w[z] <= 0.0) continue;
    for (int c = 0; c < batch.cols(); ++c)
      theta_targets(z, c) = theta_sum(z, c) / (theta_w[z] * B);
  }

  tape.backward(tape.weighted_sum(h, std::move(w_phi)));
  dec_tape.backward(dec_tape.bce_with_logits(
      dec_nodes.output, std::move(theta_targets), std::move(theta_w)));

  BatchGrads g;
  g.encoder = grads_of(tape, enc_nodes, model_.encoder);
  g.decoder = grads_of(dec_tape, dec_nodes, model_.decoder);
  g.elbo = elbo_acc / B;
  return g;
}

namespace {

/// GSM training pass: one graph from the encoder through the relaxation
/// into the decoder, so a single backward yields both gradients.
struct GsmPass {
  GradientMap enc_grad, dec_grad;
  double elbo = 0.0;
};

GsmPass gsm_step_grads(const DvaeModel& model, const Tensor& batch, double tau,
                       RngStream& gum) {
  const int B = batch.rows();
  const int k = model.latent.k;

  Tape tape;
  MlpNodes enc_nodes = forward_mlp(model.encoder, batch, tape);
  const Tape::NodeId h = tape.log_softmax(enc_nodes.output);
  const Tensor H = tape.value(h);

  Tensor gamma = Tensor::zeros({B, k});
  for (int i = 0; i < B; ++i) {
    const GumbelDraw d = sample_gumbel(k, gum);
    for (int c = 0; c < k; ++c) gamma(i, c) = d.values[c];
  }

  Tensor w_kl = Tensor::zeros({B, k});
  double kl_acc = 0.0;
  for (int i = 0; i < B; ++i) {
    kl_acc += kl_categorical_uniform(H.row_span(i));
    for (int j = 0; j < k; ++j)
      w_kl(i, j) += std::exp(H(i, j)) * (H(i, j) + 1.0) / B;
  }

  const Tape::NodeId s = tape.softmax_tau(h, gamma, tau);
  MlpNodes dec_nodes = forward_mlp_from(model.decoder, s, tape);
  std::vector<double> rw(static_cast<size_t>(B), 1.0 / B);
  const Tape::NodeId recon =
      tape.bce_with_logits(dec_nodes.output, batch, std::move(rw));
  const Tape::NodeId loss =
      tape.add(recon, tape.weighted_sum(h, std::move(w_kl)));
  tape.backward(loss);

  GsmPass out;
  out.enc_grad = grads_of(tape, enc_nodes, model.encoder);
  out.dec_grad = grads_of(tape, dec_nodes, model.decoder);

  // Report the discrete single-sample bound (hard argmax with the same
  // gammas) so the metric is comparable across estimators.
  const Tensor L = mlp_eval(model.decoder, Tensor::identity(k));
  double elbo_acc = 0.0;
  for (int i = 0; i < B; ++i) {
    GumbelDraw d;
    d.values.assign(gamma.data.begin() + static_cast<size_t>(i) * k,
                    gamma.data.begin() + static_cast<size_t>(i + 1) * k);
    const int z_star = gumbel_max_sample(H.row_span(i), d);
    double f = 0.0;
    for (int c = 0; c < L.cols(); ++c)
      f += batch(i, c) * L(z_star, c) - stable_softplus(L(z_star, c));
    elbo_acc += -f;
  }
  out.elbo = (elbo_acc + kl_acc) / B;
  return out;
}

}  // namespace

Trainer::BatchGrads Trainer::structured_grads(const Tensor& batch,
                                              double knob) {
  const int B = batch.rows();
  const int n = model_.latent.n;
  const int width = 2 * n;
  const int n_edges = model_.latent.num_edges();

  RngStream gum =
      RngStream(config_.seed, kGumbelStream).substream(
          static_cast<uint64_t>(step_));

  Tape tape;
  MlpNodes enc_nodes = forward_mlp(model_.encoder, batch, tape);
  const Tape::NodeId unary_node = tape.slice_cols(enc_nodes.output, 0, width);
  Tape::NodeId alpha_node = -1;
  if (n_edges > 0) {
    alpha_node = tape.slice_cols(enc_nodes.output, width, n_edges);
    if (model_.latent.pairwise == PairwiseMode::kSupermodular)
      alpha_node = tape.softplus(alpha_node);
  }

  const Tensor& U = tape.value(unary_node);
  const std::vector<PairwiseEdge> edges = edge_list(n);
  Tensor w_unary = Tensor::zeros({B, width});
  Tensor w_alpha =
      n_edges > 0 ? Tensor::zeros({B, n_edges}) : Tensor{};
  Tensor dec_batch = Tensor::zeros({B, width});
  double elbo_acc = 0.0;

  for (int i = 0; i < B; ++i) {
    PairwisePotentials p = PairwisePotentials::make(n);
    for (int j = 0; j < width; ++j) p.unary(j / 2, j % 2) = U(i, j);
    if (n_edges > 0) {
      p.edges = edges;
      const Tensor& A = tape.value(alpha_node);
      for (int e = 0; e < n_edges; ++e) p.edges[e].alpha = A(i, e);
    }

    const GumbelDraw gamma = sample_gumbel(width, gum);
    const Assignment z_star = solve_map(p, &gamma);
    Tensor x_i = Tensor::zeros({1, batch.cols()});
    for (int c = 0; c < batch.cols(); ++c) x_i[c] = batch(i, c);
    const Tensor f_tilde = decoder_lowdim_approx(model_.decoder, x_i, z_star);
    const Assignment z_eps =
        structured_perturbed_argmax(p, f_tilde, knob, &gamma);

    for (int j = 0; j < n; ++j) {
      w_unary(i, 2 * j + z_eps.bits[j]) -= 1.0 / (B * knob);
      w_unary(i, 2 * j + z_star.bits[j]) += 1.0 / (B * knob);
    }
    if (n_edges > 0)
      for (int e = 0; e < n_edges; ++e) {
        const PairwiseEdge& ed = edges[e];
        const double on_eps = z_eps.bits[ed.i] && z_eps.bits[ed.j] ? 1.0 : 0.0;
        const double on_star =
            z_star.bits[ed.i] && z_star.bits[ed.j] ? 1.0 : 0.0;
        w_alpha(i, e) -= (on_eps - on_star) / (B * knob);
      }

    const StructuredKl skl = structured_kl_uniform(p);
    for (int j = 0; j < n; ++j) {
      w_unary(i, 2 * j) += skl.unary_grad(j, 0) / B;
      w_unary(i, 2 * j + 1) += skl.unary_grad(j, 1) / B;
    }
    for (int e = 0; e < n_edges; ++e) w_alpha(i, e) += skl.alpha_grad[e] / B;

    for (int j = 0; j < n; ++j) dec_batch(i, 2 * j + z_star.bits[j]) = 1.0;
    elbo_acc += -f_tilde(0, z_star.bits[0]) + skl.kl;
  }

  Tape::NodeId loss = tape.weighted_sum(unary_node, std::move(w_unary));
  if (n_edges > 0)
    loss = tape.add(loss, tape.weighted_sum(alpha_node, std::move(w_alpha)));
  MlpNodes dec_nodes = forward_mlp(model_.decoder, dec_batch, tape);
  std::vector<double> rw(static_cast<size_t>(B), 1.0 / B);
  loss = tape.add(loss,
                  tape.bce_with_logits(dec_nodes.output, batch, std::move(rw)));
  tape.backward(loss);

  BatchGrads g;
  g.encoder = grads_of(tape, enc_nodes, model_.encoder);
  g.decoder = grads_of(tape, dec_nodes, model_.decoder);
  g.elbo = elbo_acc / B;
  return g;
}

StepMetrics Trainer::apply(const BatchGrads& g, double knob) {
  if (config_.optimizer == OptimizerKind::kAdam) {
    adam_enc_.step(model_.encoder, g.encoder);
    adam_dec_.step(model_.decoder, g.decoder);
  } else {
    sgd_.step(model_.encoder, g.encoder);
    sgd_.step(model_.decoder, g.decoder);
  }
  StepMetrics m;
  m.elbo = g.elbo;
  m.knob = knob;
  m.step = step_;
  ++step_;
  return m;
}

StepMetrics Trainer::train_step(const Tensor& batch) {
  if (batch.rows() < 1) throw ContractError("train_step: empty batch");
  const double knob = current_knob();
  if (model_.latent.kind == LatentSpec::Kind::kStructured)
    return apply(structured_grads(batch, knob), knob);
  if (config_.estimator.variant == EstimatorVariant::kGsm) {
    RngStream gum =
        RngStream(config_.seed, kGumbelStream).substream(
            static_cast<uint64_t>(step_));
    const GsmPass p = gsm_step_grads(model_, batch, knob, gum);
    BatchGrads g{p.enc_grad, p.dec_grad, p.elbo};
    return apply(g, knob);
  }
  return apply(categorical_grads(batch, knob, {}), knob);
}

StepMetrics Trainer::semi_supervised_step(const Tensor& batch,
                                          std::span<const int> labels) {
  if (batch.rows() < 1)
    throw ContractError("semi_supervised_step: empty batch");
  if (labels.size() != static_cast<size_t>(batch.rows()))
    throw ContractError("semi_supervised_step: one label per row required");
  if (model_.latent.kind != LatentSpec::Kind::kCategorical ||
      config_.estimator.variant != EstimatorVariant::kDirect)
    throw ConfigError(
        "semi-supervised training requires a categorical latent with the "
        "direct estimator");
  const double knob = current_knob();
  return apply(categorical_grads(batch, knob, labels), knob);
}

GradientMap supervised_phi_gradient(const MlpParams& encoder, const Tensor& x,
                                    int z_true, const GumbelDraw& gamma,
                                    double eps) {
  if (!(eps > 0.0))
    throw DomainError("supervised_phi_gradient: eps must be positive");
  const int k = encoder.output_width();
  if (z_true < 0 || z_true >= k)
    throw DomainError("supervised_phi_gradient: label out of range");
  Tape tape;
  MlpNodes nodes = forward_mlp(encoder, x, tape);
  const Tape::NodeId h = tape.log_softmax(nodes.output);
  const int z_star = gumbel_max_sample(tape.value(h).row_span(0), gamma);
  Tensor w = Tensor::zeros({1, k});
  w[z_true] += 1.0 / eps;
  w[z_star] -= 1.0 / eps;
  tape.backward(tape.weighted_sum(h, std::move(w)));
  return grads_of(tape, nodes, encoder);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalResult evaluate(const DvaeModel& model, const Dataset& data,
                    int mc_samples, uint64_t eval_seed) {
  if (mc_samples < 1) throw ContractError("evaluate: mc_samples must be >= 1");
  EvalResult out;
  const int count = data.count();
  if (count == 0) return out;
  RngStream base(eval_seed, kEvalStream);

  double loss_acc = 0.0;
  int correct = 0;

  if (model.latent.kind == LatentSpec::Kind::kCategorical) {
    const int k = model.latent.k;
    const Tensor L = mlp_eval(model.decoder, Tensor::identity(k));
    std::vector<double> sp(static_cast<size_t>(k), 0.0);
    for (int z = 0; z < k; ++z)
      for (int c = 0; c < L.cols(); ++c) sp[z] += stable_softplus(L(z, c));

    const int chunk = 512;
    std::vector<double> h(static_cast<size_t>(k));
    for (int begin = 0; begin < count; begin += chunk) {
      const int end = std::min(begin + chunk, count);
      std::vector<int> idx(static_cast<size_t>(end - begin));
      for (int i = begin; i < end; ++i) idx[i - begin] = i;
      const Tensor X = gather_rows(data.images, idx);
      const Tensor u = mlp_eval(model.encoder, X);
      for (int r = 0; r < u.rows(); ++r) {
        const double lse = log_sum_exp(u.row_span(r));
        for (int z = 0; z < k; ++z) h[z] = u(r, z) - lse;
        const double kl = kl_categorical_uniform(h);

        RngStream rng = base.substream(static_cast<uint64_t>(begin + r));
        double recon = 0.0;
        for (int s = 0; s < mc_samples; ++s) {
          const GumbelDraw gamma = sample_gumbel(k, rng);
          const int z_star = gumbel_max_sample(h, gamma);
          double f = -sp[z_star];
          for (int c = 0; c < X.cols(); ++c) f += X(r, c) * L(z_star, c);
          recon += -f;
        }
        loss_acc += recon / mc_samples + kl;
        if (data.has_labels() &&
            argmax_lowest(h) == data.labels[begin + r])
          ++correct;
      }
    }
  } else {
    const int n = model.latent.n;
    for (int i = 0; i < count; ++i) {
      const Tensor x = data.image_row(i);
      const Tensor u = mlp_eval(model.encoder, x);
      const PairwisePotentials p = model.potentials_from_row(u.row_span(0));
      const StructuredKl skl = structured_kl_uniform(p);
      RngStream rng = base.substream(static_cast<uint64_t>(i));
      double recon = 0.0;
      for (int s = 0; s < mc_samples; ++s) {
        const GumbelDraw gamma = sample_gumbel(2 * n, rng);
        const Assignment z = solve_map(p, &gamma);
        recon += -f_value(model.decoder, two_hot(z), x);
      }
      loss_acc += recon / mc_samples + skl.kl;
    }
  }

  out.test_loss = loss_acc / count;
  if (data.has_labels() &&
      model.latent.kind == LatentSpec::Kind::kCategorical) {
    out.accuracy = static_cast<double>(correct) / count;
    out.has_accuracy = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'A', 'M', 'G', 'C'};
constexpr uint32_t kCkptVersion = 1;

void write_tensor(std::ofstream& os, const Tensor& t) {
  const uint32_t nd = static_cast<uint32_t>(t.shape.size());
  os.write(reinterpret_cast<const char*>(&nd), 4);
  for (int d : t.shape) {
    const int32_t v = d;
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::ifstream& is) {
  uint32_t nd = 0;
  is.read(reinterpret_cast<char*>(&nd), 4);
  std::vector<int> shape(nd);
  for (uint32_t i = 0; i < nd; ++i) {
    int32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    shape[i] = v;
  }
  Tensor t = Tensor::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!is) throw ParseError("checkpoint: truncated tensor block");
  return t;
}

nlohmann::json layers_to_json(const MlpParams& p) {
  nlohmann::json out = nlohmann::json::array();
  for (const LayerSpec& l : p.layers)
    out.push_back({{"in", l.in}, {"out", l.out},
                   {"act", activation_name(l.act)}});
  return out;
}

std::vector<LayerSpec> layers_from_json(const nlohmann::json& j) {
  std::vector<LayerSpec> out;
  for (const auto& l : j)
    out.push_back({l.at("in").get<int>(), l.at("out").get<int>(),
                   activation_from_name(l.at("act").get<std::string>())});
  return out;
}

const char* pairwise_name(PairwiseMode m) {
  switch (m) {
    case PairwiseMode::kNone: return "none";
    case PairwiseMode::kSupermodular: return "supermodular";
    case PairwiseMode::kGeneral: return "general";
  }
  return "none";
}

PairwiseMode pairwise_from_name(const std::string& s) {
  if (s == "none") return PairwiseMode::kNone;
  if (s == "supermodular") return PairwiseMode::kSupermodular;
  if (s == "general") return PairwiseMode::kGeneral;
  throw ParseError("unknown pairwise mode: " + s);
}

}  // namespace

void Trainer::save_checkpoint(const std::string& dir,
                              const std::string& config_hash) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["format"] = "argmaxgrad-checkpoint";
  manifest["version"] = kCkptVersion;
  manifest["step"] = step_;
  manifest["config_hash"] = config_hash;
  manifest["latent"] = {
      {"kind", model_.latent.kind == LatentSpec::Kind::kCategorical
                   ? "categorical"
                   : "structured"},
      {"k", model_.latent.k},
      {"n", model_.latent.n},
      {"pairwise", pairwise_name(model_.latent.pairwise)}};
  manifest["encoder_layers"] = layers_to_json(model_.encoder);
  manifest["decoder_layers"] = layers_to_json(model_.decoder);
  manifest["optimizer"] =
      config_.optimizer == OptimizerKind::kAdam ? "adam" : "sgd";

  std::ofstream mf(fs::path(dir) / "model.json");
  if (!mf) throw Error("cannot write checkpoint manifest in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream os(fs::path(dir) / "model.ckpt", std::ios::binary);
  if (!os) throw Error("cannot write checkpoint in " + dir);
  os.write(kCkptMagic, 4);
  os.write(reinterpret_cast<const char*>(&kCkptVersion), 4);
  const uint64_t step = static_cast<uint64_t>(step_);
  os.write(reinterpret_cast<const char*>(&step), 8);
  const uint8_t opt = config_.optimizer == OptimizerKind::kAdam ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&opt), 1);
  const uint64_t adam_t = static_cast<uint64_t>(adam_enc_.t);
  os.write(reinterpret_cast<const char*>(&adam_t), 8);

  auto write_params = [&](const MlpParams& p) {
    for (size_t i = 0; i < p.weights.size(); ++i) {
      write_tensor(os, p.weights[i]);
      write_tensor(os, p.biases[i]);
    }
  };
  auto write_map = [&](const GradientMap& g) {
    for (size_t i = 0; i < g.weights.size(); ++i) {
      write_tensor(os, g.weights[i]);
      write_tensor(os, g.biases[i]);
    }
  };
  write_params(model_.encoder);
  write_params(model_.decoder);
  if (opt) {
    AdamOptimizer enc = adam_enc_, dec = adam_dec_;
    if (enc.m.weights.empty()) enc.m = GradientMap::zeros_like(model_.encoder);
    if (enc.v.weights.empty()) enc.v = GradientMap::zeros_like(model_.encoder);
    if (dec.m.weights.empty()) dec.m = GradientMap::zeros_like(model_.decoder);
    if (dec.v.weights.empty()) dec.v = GradientMap::zeros_like(model_.decoder);
    write_map(enc.m);
    write_map(enc.v);
    write_map(dec.m);
    write_map(dec.v);
  }
  if (!os) throw Error("checkpoint write failed in " + dir);
}

std::optional<Trainer> Trainer::load_checkpoint(const std::string& dir,
                                                const TrainConfig& config) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "model.json";
  const fs::path ckpt_path = fs::path(dir) / "model.ckpt";
  if (!fs::exists(manifest_path) || !fs::exists(ckpt_path))
    return std::nullopt;

  std::ifstream mf(manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(mf);

  DvaeModel model;
  const auto& lat = manifest.at("latent");
  model.latent.kind = lat.at("kind").get<std::string>() == "categorical"
                          ? LatentSpec::Kind::kCategorical
                          : LatentSpec::Kind::kStructured;
  model.latent.k = lat.at("k").get<int>();
  model.latent.n = lat.at("n").get<int>();
  model.latent.pairwise =
      pairwise_from_name(lat.at("pairwise").get<std::string>());

  std::ifstream is(ckpt_path, std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kCkptMagic, 4))
    throw ParseError("checkpoint: bad magic at byte offset 0");
  uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != kCkptVersion)
    throw ParseError("checkpoint: unsupported version " +
                     std::to_string(version));
  uint64_t step = 0;
  is.read(reinterpret_cast<char*>(&step), 8);
  uint8_t opt = 0;
  is.read(reinterpret_cast<char*>(&opt), 1);
  uint64_t adam_t = 0;
  is.read(reinterpret_cast<char*>(&adam_t), 8);

  auto read_params = [&](const nlohmann::json& layer_json) {
    MlpParams p;
    p.layers = layers_from_json(layer_json);
    for (size_t i = 0; i < p.layers.size(); ++i) {
      p.weights.push_back(read_tensor(is));
      p.biases.push_back(read_tensor(is));
    }
    return p;
  };
  model.encoder = read_params(manifest.at("encoder_layers"));
  model.decoder = read_params(manifest.at("decoder_layers"));

  Trainer trainer(std::move(model), config);
  trainer.step_ = static_cast<int64_t>(step);
  if (opt) {
    auto read_map = [&](const MlpParams& p) {
      GradientMap g;
      for (size_t i = 0; i < p.weights.size(); ++i) {
        g.weights.push_back(read_tensor(is));
        g.biases.push_back(read_tensor(is));
      }
      return g;
    };
    trainer.adam_enc_.m = read_map(trainer.model_.encoder);
    trainer.adam_enc_.v = read_map(trainer.model_.encoder);
    trainer.adam_dec_.m = read_map(trainer.model_.decoder);
    trainer.adam_dec_.v = read_map(trainer.model_.decoder);
    trainer.adam_enc_.t = static_cast<int64_t>(adam_t);
    trainer.adam_dec_.t = static_cast<int64_t>(adam_t);
  }
  return trainer;
}

}  // namespace argmaxgrad
