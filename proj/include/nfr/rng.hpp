#pragma once

#include <cmath>
#include <cstdint>

namespace nfr {

/// Name recorded in output metadata so results can be tied to the exact
/// generator: splitmix64 for the uniform stream, Marsaglia polar for normals.
inline constexpr const char* kRngName = "splitmix64-polar";

/// SplitMix64: a tiny, fully specified generator. The same seed reproduces the
/// same stream on every platform, which is what the experiment determinism
/// contract needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1), 53 mantissa bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  /// Standard normal via the polar method (no trig, portable draw sequence).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_unit() - 1.0;
      v = 2.0 * next_unit() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Expands one master seed into independent per-trial streams. Documented
/// counter scheme: two mixing rounds over (master, stream, index), so running
/// trials in any order or in parallel cannot change a trial's stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t index) {
  Rng a(master ^ (0xA0761D6478BD642FULL * (stream + 1)));
  std::uint64_t h = a.next_u64();
  Rng b(h ^ (0xE7037ED1A0B428DBULL * (index + 1)));
  return b.next_u64();
}

}  // namespace nfr
