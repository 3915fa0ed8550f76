#pragma once

#include <cmath>
#include <span>

namespace argmaxgrad {

inline double stable_softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> v) {
  double m = -HUGE_VAL;
  for (double x : v) m = std::fmax(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Sum over elements of -[t*log s(l) + (1-t)*log(1-s(l))] in the
/// softplus form, which is exact as logits saturate.
inline double bce_with_logits_sum(std::span<const double> logits,
                                  std::span<const double> targets) {
  double s = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    s += stable_softplus(logits[i]) - targets[i] * logits[i];
  return s;
}

/// Argmax with ties broken toward the lowest index.
inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace argmaxgrad
