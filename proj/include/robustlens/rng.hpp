#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace robustlens {

/// Deterministic splittable RNG. All randomness in the project flows through
/// this generator so that results are bit-stable across platforms; the
/// distributions are hand-rolled for the same reason.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  /// Standard normal via Box-Muller; one draw per call, cache for the pair.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = next_double();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  /// Integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Modulo bias is negligible for the n used here (datasets, classes).
    return next_u64() % n;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static uint64_t splitmix(uint64_t z) { return mix(z); }

  uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// FNV-1a over a tag string; used by child_seed.
inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : tag) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Fixed global-seed splitting rule: one experiment seed fans out to
/// independent per-component streams keyed by a tag.
inline uint64_t child_seed(uint64_t seed, std::string_view tag) {
  Rng r(seed ^ hash_tag(tag));
  return r.next_u64();
}

}  // namespace robustlens
