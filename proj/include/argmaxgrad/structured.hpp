#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "argmaxgrad/gumbel.hpp"
#include "argmaxgrad/mlp.hpp"
#include "argmaxgrad/tensor.hpp"

namespace argmaxgrad {

/// One joint configuration of n binary latent variables.
struct Assignment {
  std::vector<uint8_t> bits;

  int n() const { return static_cast<int>(bits.size()); }
  bool operator==(const Assignment&) const = default;
};

struct PairwiseEdge {
  int i = 0;
  int j = 0;       // i < j
  double alpha = 0.0;
};

/// Unary and pairwise log-potentials over n binary variables. The pairwise
/// term is alpha_ij * z_i * z_j; all alpha_ij >= 0 makes the potential
/// supermodular, for which exact MAP reduces to an s-t min cut.
struct PairwisePotentials {
  int n = 0;
  Tensor unary;                    // [n, 2]
  std::vector<PairwiseEdge> edges; // i < j, no duplicates

  static PairwisePotentials make(int n);
  bool supermodular() const;
  void validate() const;

  static PairwisePotentials from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// sum_i unary[i][z_i] + sum_(i,j) alpha_ij z_i z_j + sum_i gamma[2i+z_i].
double score(const PairwisePotentials& p, const Assignment& z,
             const GumbelDraw* gamma = nullptr);

/// Exhaustive MAP over all 2^n assignments (n <= 20); ties resolve to the
/// lexicographically smallest bit vector. Stand-in for a general quadratic
/// integer program solver.
Assignment brute_force_map(const PairwisePotentials& p,
                           const GumbelDraw* gamma = nullptr);

/// Exact MAP via s-t min cut; requires every alpha_ij >= 0.
Assignment maxflow_map(const PairwisePotentials& p,
                       const GumbelDraw* gamma = nullptr);

/// log sum_z exp(score(p, z)) over all 2^n assignments (n <= 20).
double exact_log_partition(const PairwisePotentials& p);

/// Per-coordinate decoder scores: entry [i][b] = f(x, z* with bit i set
/// to b), where f is the negative reconstruction BCE through `decoder`
/// on the two-hot encoding of the assignment. One batched decoder pass.
Tensor decoder_lowdim_approx(const MlpParams& decoder, const Tensor& x,
                             const Assignment& z_star);

/// MAP of the potentials with unary[i][b] += eps * f_tilde[i][b], under the
/// same gamma; max-flow when supermodular, exhaustive search otherwise.
Assignment structured_perturbed_argmax(const PairwisePotentials& p,
                                       const Tensor& f_tilde, double eps,
                                       const GumbelDraw* gamma = nullptr);

/// Exact KL(q || uniform) for the Gibbs distribution of `p`, together with
/// its derivatives w.r.t. the unary entries and the edge strengths
/// (enumeration over 2^n; n <= 20).
struct StructuredKl {
  double kl = 0.0;
  Tensor unary_grad;               // [n, 2]
  std::vector<double> alpha_grad;  // aligned with p.edges
};
StructuredKl structured_kl_uniform(const PairwisePotentials& p);

/// Two-hot encoding of an assignment: slot 2i+z_i set, width 2n.
Tensor two_hot(const Assignment& z);

}  // namespace argmaxgrad
