#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace domex {

// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over the bytes of `text`. Stable across platforms and runs.
std::uint64_t stable_hash64(std::string_view text) noexcept;

/// Counter-based random stream.
///
/// A stream is a 64-bit key; the value at counter `i` is a pure function of
/// (key, i). Child streams are derived by hashing the parent key with an index
/// or a name, so every (domain, sample, trial) coordinate owns an independent
/// stream and results never depend on the order in which they are computed.
class Stream {
 public:
  constexpr explicit Stream(std::uint64_t key = 0) noexcept : key_(key) {}

  constexpr std::uint64_t key() const noexcept { return key_; }

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return mix64(key_ + (counter + 1) * 0x9e3779b97f4a7c15ULL);
  }

  constexpr Stream child(std::uint64_t index) const noexcept {
    return Stream(mix64(key_ ^ mix64(index + 0x632be59bd9b4e019ULL)));
  }

  Stream child(std::string_view name) const noexcept {
    return child(stable_hash64(name));
  }

  friend constexpr bool operator==(Stream, Stream) = default;

 private:
  std::uint64_t key_;
};

/// Sequential reader over a Stream. Distribution transforms are implemented
/// here rather than with <random> distributions, whose algorithms are
/// implementation-defined and would break cross-platform reproducibility.
class Generator {
 public:
  explicit Generator(Stream stream) noexcept : stream_(stream) {}

  std::uint64_t next_u64() noexcept { return stream_.bits(counter_++); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; consumes two counters.
  double normal() noexcept;

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound) noexcept;

  // Index drawn from an (already normalized) probability vector.
  std::size_t categorical(std::span<const double> probabilities) noexcept;

  // Random sign, +1 or -1 with equal probability.
  int sign() noexcept { return (next_u64() >> 63) ? 1 : -1; }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  Stream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace domex
