#ifndef LORB_RNG_HPP_
#define LORB_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lorb {

// FNV-1a; used to derive per-name RNG split tags.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Splittable counter-based generator. A stream is (key, counter); the n-th
// output is a pure function of both, so replay is bit-identical and child
// streams derived via split() are independent of how much the parent was
// consumed. Mixing is the splitmix64 finalizer.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed + kGamma)) {}

  // Derives an independent child stream. Does not advance this stream.
  RngStream split(std::uint64_t tag) const {
    return RngStream(key_ ^ mix(tag + kGamma));
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; two uniforms per draw, no cached state.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace lorb

#endif  // LORB_RNG_HPP_
