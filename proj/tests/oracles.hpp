// Test-only oracles: independent reference implementations used to freeze
// or cross-check expected values. Nothing here may call the code paths it
// checks.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "argmaxgrad/mlp.hpp"
#include "argmaxgrad/rng.hpp"
#include "argmaxgrad/tensor.hpp"

namespace oracle {

using argmaxgrad::MlpParams;
using argmaxgrad::RngStream;
using argmaxgrad::Tensor;

// --------------------------------------------------------------------------
// Extended-precision scalar references (x87 long double, 64-bit mantissa).
// --------------------------------------------------------------------------

inline long double lse_ld(std::span<const double> v) {
  long double m = v[0];
  for (double x : v) m = std::max<long double>(m, x);
  long double s = 0.0L;
  for (double x : v) s += expl(static_cast<long double>(x) - m);
  return m + logl(s);
}

inline std::vector<long double> log_softmax_ld(std::span<const double> v) {
  const long double lse = lse_ld(v);
  std::vector<long double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

inline std::vector<long double> softmax_ld(std::span<const double> v) {
  auto ls = log_softmax_ld(v);
  for (auto& x : ls) x = expl(x);
  return ls;
}

/// Direct (unstable) BCE formula evaluated in extended precision.
inline long double bce_unstable_ld(std::span<const double> logits,
                                   std::span<const double> targets) {
  long double s = 0.0L;
  for (size_t i = 0; i < logits.size(); ++i) {
    const long double l = logits[i];
    const long double sg = 1.0L / (1.0L + expl(-l));
    const long double t = targets[i];
    s += -(t * logl(sg) + (1.0L - t) * logl(1.0L - sg));
  }
  return s;
}

// --------------------------------------------------------------------------
// Quadrature (adaptive Simpson).
// --------------------------------------------------------------------------

inline double simpson(const std::function<double(double)>& f, double a,
                      double b, double eps = 1e-12, int depth = 40) {
  std::function<double(double, double, double, double, double, int)> rec =
      [&](double lo, double hi, double flo, double fhi, double fmid,
          int d) -> double {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
    const double flm = f(lm), frm = f(rm);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    const double left = (mid - lo) / 6.0 * (flo + 4.0 * flm + fmid);
    const double right = (hi - mid) / 6.0 * (fmid + 4.0 * frm + fhi);
    if (d <= 0 || std::fabs(left + right - whole) < 15.0 * eps)
      return left + right + (left + right - whole) / 15.0;
    return rec(lo, mid, flo, fmid, flm, d - 1) +
           rec(mid, hi, fmid, fhi, frm, d - 1);
  };
  const double mid = 0.5 * (a + b);
  return rec(a, b, f(a), f(b), f(mid), depth);
}

// --------------------------------------------------------------------------
// Finite differences over network parameters.
// --------------------------------------------------------------------------

/// Central finite differences of a scalar function w.r.t. every entry of
/// `params`, flattened weight-then-bias per layer (the GradientMap order).
inline std::vector<double> fd_gradient(MlpParams& params,
                                       const std::function<double()>& eval,
                                       double step = 1e-5) {
  std::vector<double> grad;
  auto probe = [&](double& v) {
    const double keep = v;
    v = keep + step;
    const double up = eval();
    v = keep - step;
    const double down = eval();
    v = keep;
    grad.push_back((up - down) / (2.0 * step));
  };
  for (size_t l = 0; l < params.weights.size(); ++l)
    for (auto& v : params.weights[l].data) probe(v);
  for (size_t l = 0; l < params.biases.size(); ++l)
    for (auto& v : params.biases[l].data) probe(v);
  return grad;
}

/// GradientMap flattened in the fd_gradient order (all weights, then all
/// biases would differ from GradientMap::flatten; match fd order instead).
inline std::vector<double> flatten_like_fd(const argmaxgrad::GradientMap& g) {
  std::vector<double> out;
  for (const auto& t : g.weights) out.insert(out.end(), t.data.begin(), t.data.end());
  for (const auto& t : g.biases) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

// --------------------------------------------------------------------------
// Vector metrics.
// --------------------------------------------------------------------------

inline double max_rel_error(std::span<const double> got,
                            std::span<const double> want,
                            double floor = 1e-8) {
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    const double denom = std::fmax(std::fabs(want[i]), floor);
    worst = std::fmax(worst, std::fabs(got[i] - want[i]) / denom);
  }
  return worst;
}

inline double l2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double l2_diff(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

/// Deterministic fill for test tensors, uniform in [lo, hi].
inline void fill_uniform(Tensor& t, RngStream& rng, double lo, double hi) {
  for (double& v : t.data) v = lo + (hi - lo) * rng.next_uniform();
}

}  // namespace oracle
