#pragma once

#include <cstdint>

namespace argmaxgrad {

/// Counter-based pseudo-random stream (SplitMix64 finalizer over
/// key + counter * golden-ratio increment).
///
/// The state is just (key, counter), so any draw can be replayed by
/// seeking the counter. That replay property is what lets one Gumbel
/// draw be shared between the paired argmax evaluations of the direct
/// estimator, and lets interrupted training resume deterministically.
class RngStream {
 public:
  explicit RngStream(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();

  /// Uniform double in [0, 1), 53-bit resolution.
  double next_uniform();

  /// Derives a statistically independent stream; `this` is unchanged.
  RngStream substream(uint64_t id) const;

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }
  void seek(uint64_t counter) { counter_ = counter; }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace argmaxgrad
