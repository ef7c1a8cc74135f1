#pragma once

#include <cstdint>
#include <vector>

namespace one {

// Deterministic counter-based generator (splitmix64 core). The stream is a
// pure function of the 64-bit seed and the draw counter, so the same seed
// yields a bit-identical sequence on every platform. Normal variates are
// produced by summing 12 uniforms (no libm calls), which keeps even the
// floating-point results bit-identical everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Approximate standard normal: sum of 12 uniforms minus 6 (mean 0, var 1).
  double next_normal() {
    double s = 0.0;
    for (int i = 0; i < 12; ++i) s += next_uniform();
    return s - 6.0;
  }

  // Independent substream for (seed, stream) pairs, e.g. per-epoch shuffles.
  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    Rng mixer(seed ^ (0xA0761D6478BD642FULL + stream * 0xE7037ED1A0B428DBULL));
    return Rng(mixer.next_u64());
  }

  // In-place Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace one
