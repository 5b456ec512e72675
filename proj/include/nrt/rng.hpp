// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace nrt {

// splitmix64. Used everywhere instead of <random> so that streams are
// reproducible across standard libraries and across runs.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL) {}

  uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0, 1) with 53 bits of entropy
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) { return next_u64() % n; }

 private:
  uint64_t state_;
};

// Counter-based stream: the value for a given (seed, stream, counter) triple
// never depends on how many draws other streams made, so per-ray randomness
// is independent of batching and worker scheduling.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : key_(mix(seed, stream)), counter_(0) {}

  double uniform() {
    uint64_t s = key_ + counter_++ * 0x9e3779b97f4a7c15ULL;
    return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

 private:
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t s = a ^ (b * 0xff51afd7ed558ccdULL + 0xc4ceb9fe1a85ec53ULL);
    return splitmix64(s);
  }
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace nrt
