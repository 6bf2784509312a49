// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random streams. Everything that samples (world generation,
// noise, dropout, weight init, shuffles) goes through RngStream so that runs
// are bit-reproducible across platforms; std:: distributions are
// implementation-defined and deliberately avoided.

#pragma once

#include <cmath>
#include <cstdint>

#include "umpe/common.hpp"

namespace umpe {

/// SplitMix64 generator. Cheap, full 64-bit state, well mixed.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Integer in [0, n). n must be positive.
  std::uint64_t next_below(std::uint64_t n) {
    // Modulo bias is < 2^-40 for every n used here; acceptable.
    return next_u64() % n;
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(next_below(
                    static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller (no cached spare; keeps the stream
  /// position independent of call parity).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
  std::uint64_t state_;
};

/// Derives an independent child seed, e.g. per (dataset seed, frame id),
/// so parallel and serial generation agree bit-for-bit.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) {
  std::uint64_t buf[2] = {base, key};
  return fnv1a64(buf, sizeof buf);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return fnv1a64(tag, fnv1a64(&base, sizeof base));
}

}  // namespace umpe
