#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace mflq::rng {

/// Counter-based random numbers (Philox4x32-10).
///
/// Every draw is a pure function of (seed, stream, i0, i1, i2, i3), so the
/// label-indexed Brownian family and the Monte-Carlo ensembles are
/// reproducible bit-for-bit regardless of how work is scheduled across
/// threads, and distinct (common path, idiosyncratic replica, label, knot)
/// tuples get independent draws by construction.
enum class Stream : std::uint32_t {
  /// dB̃⁰ increments: one block of n_steps normals per common path,
  /// filled via normal_fill(seed, CommonNoise, common, 0, 0, n_steps).
  CommonNoise = 1,
  /// dW^u increments: one block of n_labels normals per (common, idio, knot),
  /// filled via normal_fill(seed, Idiosyncratic, common, idio, knot, n_labels).
  Idiosyncratic = 2,
  /// ξ draws inside ensembles: one block of n_labels·d normals per
  /// (common, idio), filled via normal_fill(seed, InitialSim, common, idio, 0, n·d).
  InitialSim = 3,
  /// ξ draws from build_initial_condition, keyed (sample, 0, label, dim).
  InitialBatch = 4,
};

namespace detail {

struct U32x2 {
  std::uint32_t hi, lo;
};

inline U32x2 mulhilo(std::uint32_t a, std::uint32_t b) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  return {static_cast<std::uint32_t>(p >> 32), static_cast<std::uint32_t>(p)};
}

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const U32x2 p0 = mulhilo(kM0, ctr[0]);
    const U32x2 p1 = mulhilo(kM1, ctr[2]);
    ctr = {p1.hi ^ ctr[1] ^ key[0], p1.lo, p0.hi ^ ctr[3] ^ key[1], p0.lo};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

inline std::array<std::uint32_t, 2> stream_key(std::uint64_t seed, Stream stream) {
  const auto s = static_cast<std::uint32_t>(stream);
  return {static_cast<std::uint32_t>(seed) ^ (0x85EBCA6Bu * s),
          static_cast<std::uint32_t>(seed >> 32) ^ (0xC2B2AE35u * s)};
}

inline double to_unit_interval(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  // 53 mantissa bits, offset by half an ulp: strictly inside (0,1).
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1p-53;
}

}  // namespace detail

/// Two independent U(0,1) variates for one counter.
[[nodiscard]] inline std::pair<double, double> uniform_pair(std::uint64_t seed, Stream stream,
                                                            std::uint32_t i0, std::uint32_t i1,
                                                            std::uint32_t i2, std::uint32_t i3) {
  const auto x = detail::philox4x32_10({i0, i1, i2, i3}, detail::stream_key(seed, stream));
  return {detail::to_unit_interval(x[0], x[1]), detail::to_unit_interval(x[2], x[3])};
}

/// Two independent standard normals for one counter (Box–Muller).
[[nodiscard]] inline std::pair<double, double> normal_pair(std::uint64_t seed, Stream stream,
                                                           std::uint32_t i0, std::uint32_t i1,
                                                           std::uint32_t i2, std::uint32_t i3) {
  const auto [u1, u2] = uniform_pair(seed, stream, i0, i1, i2, i3);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(phi), r * std::sin(phi)};
}

/// One standard normal for one counter.
[[nodiscard]] inline double normal(std::uint64_t seed, Stream stream, std::uint32_t i0,
                                   std::uint32_t i1, std::uint32_t i2, std::uint32_t i3) {
  return normal_pair(seed, stream, i0, i1, i2, i3).first;
}

/// Fills out[0..n) with independent standard normals, pairing consecutive
/// entries on one counter: (out[2a], out[2a+1]) come from counter
/// (i0, i1, a, i3).  This is the block convention referenced by Stream: the
/// third counter slot indexes Box–Muller pairs within the block.
inline void normal_fill(std::uint64_t seed, Stream stream, std::uint32_t i0, std::uint32_t i1,
                        std::uint32_t i3, int n, double* out) {
  for (int a = 0; 2 * a < n; ++a) {
    const auto [z0, z1] =
        normal_pair(seed, stream, i0, i1, static_cast<std::uint32_t>(a), i3);
    out[2 * a] = z0;
    if (2 * a + 1 < n) out[2 * a + 1] = z1;
  }
}

}  // namespace mflq::rng
