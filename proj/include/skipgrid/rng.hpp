#pragma once

#include <cmath>
#include <cstdint>

namespace skipgrid {

// Counter-based generator: draw k is a pure function of (seed, k), so a
// stream can be reseeked or replayed and two streams with different seeds
// never interleave state. Output mixing is the splitmix64 finalizer.
class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed, std::uint64_t position = 0)
      : seed_(seed), pos_(position) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return pos_; }

  std::uint64_t next_u64() {
    std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ull * ++pos_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 24 bits of resolution (exact as float).
  float next_uniform() {
    return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
  }

  // Uniform in [0, 1) with 53 bits, for double-precision consumers.
  double next_uniform_f64() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased-enough integer in [0, bound): 128-bit multiply-shift.
  std::uint64_t next_bounded(std::uint64_t bound) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  // Standard normal via Box-Muller; avoids the library distributions so
  // sequences are identical across standard library implementations.
  double next_normal() {
    double u1 = 1.0 - next_uniform_f64();  // (0, 1], keeps log finite
    double u2 = next_uniform_f64();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t pos_ = 0;
};

// Stable stream derivation. Every randomized site in the program owns a
// stream keyed by (root seed, site id, round), so adding or removing one
// site never shifts the draws seen by another.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline RngState derive_stream(std::uint64_t root_seed, std::uint64_t site_id,
                              std::uint64_t round = 0) {
  return RngState(mix_seed(mix_seed(root_seed, site_id), round));
}

}  // namespace skipgrid
