#include "domex/rng.hpp"

#include <cmath>
#include <numbers>

namespace domex {

std::uint64_t stable_hash64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double Generator::normal() noexcept {
  // 1 - uniform() lies in (0, 1], so the logarithm is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Generator::below(std::uint64_t bound) noexcept {
  if (bound <= 1) return 0;
  // Lemire's multiply-shift with rejection.
  while (true) {
    const unsigned __int128 product =
        static_cast<unsigned __int128>(next_u64()) * bound;
    const auto low = static_cast<std::uint64_t>(product);
    if (low >= bound || low >= (-bound) % bound) {
      return static_cast<std::uint64_t>(product >> 64);
    }
  }
}

std::size_t Generator::categorical(std::span<const double> probabilities) noexcept {
  const double u = uniform();
  double cumulative = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    cumulative += probabilities[i];
    if (u < cumulative) return i;
  }
  // Rounding slack: fall back to the last class with positive mass.
  for (std::size_t i = probabilities.size(); i-- > 0;) {
    if (probabilities[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace domex
