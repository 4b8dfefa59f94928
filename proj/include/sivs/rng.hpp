#ifndef SIVS_RNG_HPP
#define SIVS_RNG_HPP

#include <cstdint>

// Deterministic random source used everywhere in the project. The generator
// is splitmix64 with the usual constants; docs/formats.md pins the exact
// integer stream so an independent implementation can reproduce datasets
// bit for bit. Floating-point derivations (uniform, normal) are defined on
// top of that stream.

namespace sivs {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  // Integer in [0, n); n must be > 0. Uses rejection to stay unbiased.
  std::uint64_t next_below(std::uint64_t n);

  // Standard normal via Box-Muller. Draws two uniforms per pair and caches
  // the second value, so normals always consume the stream in pairs.
  double next_normal();

  // Derive an independent sub-stream seed, e.g. one per clip or per sample.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace sivs

#endif
