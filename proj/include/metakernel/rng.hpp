#pragma once

#include <cmath>
#include <cstdint>

namespace mk {

/// splitmix64 finalizer; fully deterministic across platforms.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based random stream keyed by (seed, a, b, c). Streams with
/// distinct keys are independent, so evaluation order can never change the
/// numbers a consumer sees.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t a = 0,
                      std::uint64_t b = 0, std::uint64_t c = 0) {
    state_ = mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in the open interval (0,1); never returns 0 or 1 exactly.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Gumbel(0,1) draw: -log(-log(u)).
  double gumbel() { return -std::log(-std::log(uniform01())); }

 private:
  std::uint64_t state_;
};

// Domain tags keeping independent uses of one run seed decorrelated.
namespace rng_domain {
inline constexpr std::uint64_t kGumbel = 0x67756d62656cULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kData = 0x64617461ULL;
inline constexpr std::uint64_t kShuffle = 0x73687566ULL;
}  // namespace rng_domain

}  // namespace mk
