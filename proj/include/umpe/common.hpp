// SPDX-License-Identifier: Apache-2.0
//
// Shared constants and small utilities. The BEV frame convention lives here
// and nowhere else:
//
//   +x = forward (longitudinal, 60 m extent), +y = left (lateral, 30 m extent).
//   Canvas is H rows x W cols with rows spanning the lateral axis
//   (H * mpp_y == 30 m) and columns the longitudinal axis (W * mpp_x == 60 m),
//   matching the affine normalization that pairs x with W and y with H.
//   Column 0 is rear-most (x = -30 m), row 0 is left-most (y = +15 m),
//   ego at canvas center. Pixel centers: x(c) = -X_HALF + (c + 0.5) * mpp_x,
//   y(r) = +Y_HALF - (r + 0.5) * mpp_y.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace umpe {

inline constexpr double kXHalfExtent = 30.0;  // meters, forward/back
inline constexpr double kYHalfExtent = 15.0;  // meters, left/right
inline constexpr int kPolylinePoints = 11;    // P, resampled point count
inline constexpr double kEps = 1e-8;          // confidence clamp / presence log
inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Bad caller input (shapes, ranges, malformed files). The CLI maps this
/// to exit code 2; everything else is a runtime failure (exit 1).
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void validate(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

/// FNV-1a, used for config hashes and checkpoint weight digests.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

}  // namespace umpe
