#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "utlo/common.hpp"

namespace utlo {

// splitmix64 stream. One u64 of state, so stream position is trivially
// serializable, and child streams are derived by hashing rather than
// jumping. All draws are built on top of next_u64 so results do not depend
// on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform double in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // uniform double in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // standard normal via Box-Muller (fresh pair per call, spare discarded;
  // keeps the stream position a pure function of call count)
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  float normal_f() { return static_cast<float>(normal()); }

  Rng split(const std::string& label, uint64_t salt = 0) const {
    return Rng(derive_seed(state_, label, salt));
  }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  uint64_t state_;
};

}  // namespace utlo
