#pragma once

#include <cstdint>
#include <random>

namespace xmr {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Folds `value` into running hash `h`; order-sensitive.
constexpr std::uint64_t hash_combine(std::uint64_t h, std::uint64_t value) noexcept {
  return mix64(h ^ mix64(value));
}

std::uint64_t hash_bytes(std::string_view bytes) noexcept;

/// Bit pattern of a double, with -0.0 folded onto +0.0.
std::uint64_t double_bits(double v) noexcept;

/// Deterministic generator: std::mt19937_64 plus distribution code written
/// here, so draws do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, bound) by rejection sampling; bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound);

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace xmr
