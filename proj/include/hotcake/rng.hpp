#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace hotcake {

/// Counter-based 64-bit generator (splitmix64 finalizer applied to
/// seed + counter). Each draw depends only on (seed, counter), so a
/// stream can be regenerated from its seed alone.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::uint64_t next_u64() { return mix(seed_ + counter_++ * 0x9E3779B97F4A7C15ULL); }

  /// Uniform draw in [0, 1).
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; draws two uniforms per pair.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Decorrelated sub-stream seed for (seed, stream) pairs, e.g. one
/// stream per tensor mode or per network layer.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return CounterRng::mix(seed ^ CounterRng::mix(stream + 0x5851F42D4C957F2DULL));
}

}  // namespace hotcake
