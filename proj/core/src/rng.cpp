#include "mmgt/rng.hpp"

#include <cmath>

namespace mmgt {

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 is kept away from 0 so log() stays finite.
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                          std::uint64_t index) {
  // FNV-1a over the label, then splitmix-style finalization with base/index.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : label) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  std::uint64_t z = base ^ (h + 0x9e3779b97f4a7c15ULL + (index << 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  // Seed 0 would collapse the first splitmix draw; avoid it.
  return z == 0 ? 0x6a09e667f3bcc908ULL : z;
}

}  // namespace mmgt
