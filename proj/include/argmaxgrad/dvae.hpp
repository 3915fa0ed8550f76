#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "argmaxgrad/data.hpp"
#include "argmaxgrad/estimators.hpp"
#include "argmaxgrad/mlp.hpp"
#include "argmaxgrad/structured.hpp"

namespace argmaxgrad {

enum class PairwiseMode { kNone, kSupermodular, kGeneral };

struct LatentSpec {
  enum class Kind { kCategorical, kStructured };
  Kind kind = Kind::kCategorical;
  int k = 0;                                    // categorical classes
  int n = 0;                                    // structured binary variables
  PairwiseMode pairwise = PairwiseMode::kNone;  // structured encoder coupling

  /// Decoder input width: one-hot k, or two-hot 2n.
  int decoder_input_width() const;
  /// Encoder head width: k logits, or 2n unary entries plus one strength
  /// per pair when the encoder is coupled.
  int encoder_output_width() const;
  int num_edges() const;
};

/// Encoder x -> latent potentials, decoder latent -> pixel logits.
struct DvaeModel {
  MlpParams encoder;
  MlpParams decoder;
  LatentSpec latent;

  static DvaeModel categorical(int input_dim, int hidden, int k,
                               RngStream& rng);
  static DvaeModel structured(int input_dim, int hidden, int n,
                              PairwiseMode pairwise, RngStream& rng);

  /// Structured potentials for one encoder output row; supermodular coupling
  /// maps raw strengths through softplus.
  PairwisePotentials potentials_from_row(std::span<const double> row) const;
};

/// KL(q || uniform over k) = sum_z q(z) log q(z) + log k, for normalized
/// log-probabilities (exp sums to 1 within 1e-9).
double kl_categorical_uniform(std::span<const double> log_probs);

/// Negative single-sample bound contribution -f(x,z) + kl_value.
double elbo(const DvaeModel& model, const Tensor& x, int z, double kl_value);
double elbo(const DvaeModel& model, const Tensor& x, const Assignment& z,
            double kl_value);

enum class OptimizerKind { kAdam, kSgd };

struct SupervisionConfig {
  int num_labels = 100;
  double weight = 1.0;
};

struct TrainConfig {
  EstimatorConfig estimator;
  double learning_rate = 1e-3;
  double anneal_rate = 1e-5;
  int anneal_period = 1000;
  double epsilon_min = 0.1;
  int epochs = 30;
  int batch_size = 100;
  uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::optional<SupervisionConfig> supervision;
};

/// knob0 * exp(-rate * floor(step/period) * period), floored at eps_min.
double annealed_knob(double knob0, int64_t step, const TrainConfig& config);

struct StepMetrics {
  double elbo = 0.0;  // batch mean of -f(x, z*) + KL
  double knob = 0.0;  // epsilon (direct) or tau (gsm) used this step
  int64_t step = 0;
};

/// Owns the model, optimizer state and step counter across updates. All
/// randomness derives from (config.seed, step), so trajectories are
/// bit-reproducible and training resumes exactly from a checkpoint.
class Trainer {
 public:
  Trainer(DvaeModel model, TrainConfig config);

  StepMetrics train_step(const Tensor& batch);
  StepMetrics semi_supervised_step(const Tensor& batch,
                                   std::span<const int> labels);

  const DvaeModel& model() const { return model_; }
  DvaeModel& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  int64_t steps() const { return step_; }
  double current_knob() const;

  void save_checkpoint(const std::string& dir,
                       const std::string& config_hash = "") const;
  /// Restores model, optimizer state and step counter; returns nullopt when
  /// the directory holds no checkpoint.
  static std::optional<Trainer> load_checkpoint(const std::string& dir,
                                                const TrainConfig& config);

 private:
  struct BatchGrads {
    GradientMap encoder;
    GradientMap decoder;
    double elbo = 0.0;
  };
  BatchGrads categorical_grads(const Tensor& batch, double knob,
                               std::span<const int> labels);
  BatchGrads structured_grads(const Tensor& batch, double knob);
  StepMetrics apply(const BatchGrads& g, double knob);

  DvaeModel model_;
  TrainConfig config_;
  int64_t step_ = 0;
  AdamOptimizer adam_enc_, adam_dec_;
  SgdOptimizer sgd_;
};

struct EvalResult {
  double test_loss = 0.0;
  double accuracy = 0.0;
  bool has_accuracy = false;
};

/// Mean over the dataset of (-f(x, z*) averaged over mc_samples Gumbel
/// draws) + KL; argmax-encoder accuracy when labels are present.
EvalResult evaluate(const DvaeModel& model, const Dataset& data,
                    int mc_samples, uint64_t eval_seed = 0xE7A1);

/// The supervised phi-term of the semi-supervised objective:
/// (grad h(x, z_true) - grad h(x, z*)) / eps, sharing one Gumbel draw.
GradientMap supervised_phi_gradient(const MlpParams& encoder, const Tensor& x,
                                    int z_true, const GumbelDraw& gamma,
                                    double eps);

}  // namespace argmaxgrad
