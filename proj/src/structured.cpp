#include "argmaxgrad/structured.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "argmaxgrad/errors.hpp"
#include "argmaxgrad/maxflow.hpp"
#include "argmaxgrad/numerics.hpp"

namespace argmaxgrad {

namespace {

constexpr int kMaxEnumerationBits = 20;

void require_enumerable(int n, const char* op) {
  if (n > kMaxEnumerationBits)
    throw CapacityError(std::string(op) + ": n = " + std::to_string(n) +
                        " exceeds the 2^" +
                        std::to_string(kMaxEnumerationBits) +
                        " enumeration limit");
}

void require_gamma(const PairwisePotentials& p, const GumbelDraw* gamma) {
  if (gamma && gamma->values.size() != static_cast<size_t>(2 * p.n))
    throw ContractError("structured gamma must hold one value per "
                        "(coordinate, state) pair");
}

double mask_score(const PairwisePotentials& p, uint32_t mask,
                  const double* gamma) {
  double s = 0.0;
  for (int i = 0; i < p.n; ++i) {
    const int b = (mask >> i) & 1u;
    s += p.unary(i, b);
    if (gamma) s += gamma[2 * i + b];
  }
  for (const PairwiseEdge& e : p.edges)
    if (((mask >> e.i) & 1u) && ((mask >> e.j) & 1u)) s += e.alpha;
  return s;
}

bool lex_less(uint32_t a, uint32_t b, int n) {
  for (int i = 0; i < n; ++i) {
    const int ba = (a >> i) & 1u, bb = (b >> i) & 1u;
    if (ba != bb) return ba < bb;
  }
  return false;
}

Assignment from_mask(uint32_t mask, int n) {
  Assignment z;
  z.bits.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) z.bits[i] = (mask >> i) & 1u;
  return z;
}

}  // namespace

PairwisePotentials PairwisePotentials::make(int n) {
  PairwisePotentials p;
  p.n = n;
  p.unary = Tensor::zeros({n, 2});
  return p;
}

bool PairwisePotentials::supermodular() const {
  for (const PairwiseEdge& e : edges)
    if (e.alpha < 0.0) return false;
  return true;
}

void PairwisePotentials::validate() const {
  if (n <= 0) throw ContractError("PairwisePotentials: n must be positive");
  if (unary.rows() != n || unary.cols() != 2)
    throw ShapeError("PairwisePotentials: unary must be [n,2]");
  if (!unary.all_finite())
    throw NumericError("PairwisePotentials: non-finite unary entry");
  for (const PairwiseEdge& e : edges) {
    if (e.i < 0 || e.j <= e.i || e.j >= n)
      throw ContractError("PairwisePotentials: edge must satisfy 0 <= i < j < n");
    if (!std::isfinite(e.alpha))
      throw NumericError("PairwisePotentials: non-finite alpha");
  }
}

PairwisePotentials PairwisePotentials::from_json(const nlohmann::json& j) {
  PairwisePotentials p = make(j.at("n").get<int>());
  const auto& u = j.at("unary");
  for (int i = 0; i < p.n; ++i) {
    p.unary(i, 0) = u.at(i).at(0).get<double>();
    p.unary(i, 1) = u.at(i).at(1).get<double>();
  }
  for (const auto& e : j.at("edges"))
    p.edges.push_back({e.at("i").get<int>(), e.at("j").get<int>(),
                       e.at("alpha").get<double>()});
  p.validate();
  return p;
}

nlohmann::json PairwisePotentials::to_json() const {
  nlohmann::json u = nlohmann::json::array();
  for (int i = 0; i < n; ++i)
    u.push_back(nlohmann::json::array({unary(i, 0), unary(i, 1)}));
  nlohmann::json es = nlohmann::json::array();
  for (const PairwiseEdge& e : edges)
    es.push_back({{"i", e.i}, {"j", e.j}, {"alpha", e.alpha}});
  return {{"n", n}, {"unary", u}, {"edges", es}};
}

double score(const PairwisePotentials& p, const Assignment& z,
             const GumbelDraw* gamma) {
  if (z.n() != p.n)
    throw ContractError("score: assignment length " + std::to_string(z.n()) +
                        " != n = " + std::to_string(p.n));
  require_gamma(p, gamma);
  double s = 0.0;
  for (int i = 0; i < p.n; ++i) {
    s += p.unary(i, z.bits[i]);
    if (gamma) s += gamma->values[2 * i + z.bits[i]];
  }
  for (const PairwiseEdge& e : p.edges)
    if (z.bits[e.i] && z.bits[e.j]) s += e.alpha;
  return s;
}

Assignment brute_force_map(const PairwisePotentials& p,
                           const GumbelDraw* gamma) {
  p.validate();
  require_enumerable(p.n, "brute_force_map");
  require_gamma(p, gamma);
  const double* g = gamma ? gamma->values.data() : nullptr;
  uint32_t best = 0;
  double best_score = mask_score(p, 0, g);
  const uint32_t total = 1u << p.n;
  for (uint32_t mask = 1; mask < total; ++mask) {
    const double s = mask_score(p, mask, g);
    if (s > best_score ||
        (s == best_score && lex_less(mask, best, p.n))) {
      best = mask;
      best_score = s;
    }
  }
  return from_mask(best, p.n);
}

Assignment maxflow_map(const PairwisePotentials& p, const GumbelDraw* gamma) {
  p.validate();
  require_gamma(p, gamma);
  if (!p.supermodular())
    throw ContractError(
        "maxflow_map requires alpha_ij >= 0; use brute_force_map for general "
        "pairwise potentials");

  // Minimize E(z) = -score(z). Expanding -a*zi*zj = -a*zi + a*zi*(1-zj)
  // leaves only nonnegative coefficients on the mixed terms, which become
  // plain cut edges. Convention: z_i = 1 iff node i ends on the sink side.
  const int n = p.n;
  const int s = n, t = n + 1;
  MaxFlowGraph g(n + 2);

  std::vector<double> coef_on(n), coef_off(n);
  for (int i = 0; i < n; ++i) {
    double u1 = p.unary(i, 1), u0 = p.unary(i, 0);
    if (gamma) {
      u1 += gamma->values[2 * i + 1];
      u0 += gamma->values[2 * i + 0];
    }
    coef_on[i] = -u1;
    coef_off[i] = -u0;
  }
  for (const PairwiseEdge& e : p.edges) coef_on[e.i] -= e.alpha;

  for (int i = 0; i < n; ++i) {
    const double m = std::fmin(coef_on[i], coef_off[i]);
    const double pay_on = coef_on[i] - m;   // charged when z_i = 1
    const double pay_off = coef_off[i] - m; // charged when z_i = 0
    if (pay_on > 0.0) g.add_edge(s, i, pay_on);
    if (pay_off > 0.0) g.add_edge(i, t, pay_off);
  }
  // a*zi*(1-zj): charged when i is on the sink side and j on the source side.
  for (const PairwiseEdge& e : p.edges)
    if (e.alpha > 0.0) g.add_edge(e.j, e.i, e.alpha);

  g.max_flow(s, t);
  const std::vector<char> reach = g.source_side(s);
  Assignment z;
  z.bits.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) z.bits[i] = reach[i] ? 0 : 1;
  return z;
}

double exact_log_partition(const PairwisePotentials& p) {
  p.validate();
  require_enumerable(p.n, "exact_log_partition");
  const uint32_t total = 1u << p.n;
  // Online log-sum-exp keeps the running maximum as the shift.
  double m = -HUGE_VAL, acc = 0.0;
  for (uint32_t mask = 0; mask < total; ++mask) {
    const double v = mask_score(p, mask, nullptr);
    if (v <= m) {
      acc += std::exp(v - m);
    } else {
      acc = acc * std::exp(m - v) + 1.0;
      m = v;
    }
  }
  return m + std::log(acc);
}

Tensor two_hot(const Assignment& z) {
  Tensor t = Tensor::zeros({1, 2 * z.n()});
  for (int i = 0; i < z.n(); ++i) t[2 * i + z.bits[i]] = 1.0;
  return t;
}

Tensor decoder_lowdim_approx(const MlpParams& decoder, const Tensor& x,
                             const Assignment& z_star) {
  const int n = z_star.n();
  if (decoder.input_width() != 2 * n)
    throw ShapeError("decoder_lowdim_approx: decoder expects input width " +
                     std::to_string(decoder.input_width()) + ", latent has " +
                     std::to_string(2 * n));
  // Rows: the base assignment, then each single-coordinate flip.
  Tensor batch = Tensor::zeros({n + 1, 2 * n});
  for (int i = 0; i < n; ++i) batch(0, 2 * i + z_star.bits[i]) = 1.0;
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < n; ++i) batch(r + 1, 2 * i + z_star.bits[i]) = 1.0;
    batch(r + 1, 2 * r + z_star.bits[r]) = 0.0;
    batch(r + 1, 2 * r + (1 - z_star.bits[r])) = 1.0;
  }
  const Tensor logits = mlp_eval(decoder, batch);
  auto f_of_row = [&](int r) {
    double f = 0.0;
    for (int c = 0; c < logits.cols(); ++c)
      f += x[c] * logits(r, c) - stable_softplus(logits(r, c));
    return f;
  };
  const double f_base = f_of_row(0);
  Tensor out = Tensor::zeros({n, 2});
  for (int i = 0; i < n; ++i) {
    out(i, z_star.bits[i]) = f_base;
    out(i, 1 - z_star.bits[i]) = f_of_row(i + 1);
  }
  return out;
}

Assignment structured_perturbed_argmax(const PairwisePotentials& p,
                                       const Tensor& f_tilde, double eps,
                                       const GumbelDraw* gamma) {
  if (eps < 0.0)
    throw ContractError("structured_perturbed_argmax: eps must be >= 0");
  if (f_tilde.rows() != p.n || f_tilde.cols() != 2)
    throw ShapeError("structured_perturbed_argmax: f_tilde must be [n,2]");
  PairwisePotentials q = p;
  for (int i = 0; i < p.n; ++i) {
    q.unary(i, 0) += eps * f_tilde(i, 0);
    q.unary(i, 1) += eps * f_tilde(i, 1);
  }
  return q.supermodular() ? maxflow_map(q, gamma) : brute_force_map(q, gamma);
}

StructuredKl structured_kl_uniform(const PairwisePotentials& p) {
  p.validate();
  require_enumerable(p.n, "structured_kl_uniform");
  const double log_z = exact_log_partition(p);
  const uint32_t total = 1u << p.n;

  double mean_score = 0.0;
  for (uint32_t mask = 0; mask < total; ++mask) {
    const double sc = mask_score(p, mask, nullptr);
    mean_score += std::exp(sc - log_z) * sc;
  }

  StructuredKl out;
  // KL(q || uniform) = E_q[s] - log Z + n log 2.
  out.kl = std::fmax(mean_score - log_z + p.n * std::log(2.0), 0.0);
  out.unary_grad = Tensor::zeros({p.n, 2});
  out.alpha_grad.assign(p.edges.size(), 0.0);

  // dKL/ds_z = q_z (s_z - E_q[s]); chain onto each potential entry.
  for (uint32_t mask = 0; mask < total; ++mask) {
    const double sc = mask_score(p, mask, nullptr);
    const double w = std::exp(sc - log_z) * (sc - mean_score);
    for (int i = 0; i < p.n; ++i) out.unary_grad(i, (mask >> i) & 1u) += w;
    for (size_t e = 0; e < p.edges.size(); ++e)
      if (((mask >> p.edges[e].i) & 1u) && ((mask >> p.edges[e].j) & 1u))
        out.alpha_grad[e] += w;
  }
  return out;
}

}  // namespace argmaxgrad
