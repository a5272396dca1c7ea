#include "xmrbench/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string_view>

namespace xmr {

std::uint64_t hash_bytes(std::string_view bytes) noexcept {
  // FNV-1a, then finalized.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

std::uint64_t double_bits(double v) noexcept {
  if (v == 0.0) v = 0.0;
  return std::bit_cast<std::uint64_t>(v);
}

std::uint64_t Rng::uniform_index(std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return r % bound;
  }
}

double Rng::normal() {
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace xmr
