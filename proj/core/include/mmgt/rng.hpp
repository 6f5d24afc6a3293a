#pragma once

#include <cstdint>
#include <string_view>

namespace mmgt {

/// Deterministic PRNG used everywhere in place of std:: distributions, so
/// generated bytes do not depend on the standard library implementation.
/// splitmix64 state transition, Box-Muller for normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  double normal();

  template <typename T>
  void shuffle(T& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Named sub-stream derivation: mixes a label (and optional index) into a base
/// seed so each pipeline stage / patient draws from an independent stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                          std::uint64_t index = 0);

}  // namespace mmgt
