#include "argmaxgrad/rng.hpp"

namespace argmaxgrad {

namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBull;
  x ^= x >> 31;
  return x;
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream)
    : key_(mix64(mix64(seed + kGolden) ^ (stream * 0xD1342543DE82EF95ull + 1))) {}

uint64_t RngStream::next_u64() { return mix64(key_ + (++counter_) * kGolden); }

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

RngStream RngStream::substream(uint64_t id) const {
  RngStream s(0);
  s.key_ = mix64(key_ ^ mix64(id + kGolden));
  return s;
}

}  // namespace argmaxgrad
