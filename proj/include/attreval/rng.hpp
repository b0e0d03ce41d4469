#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace attreval {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// hash(seed, a, b, ...) for per-sample / per-k streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Fractions like k are hashed through their micro-unit value so 0.15 from a
// config file and 0.15 from a literal give the same stream.
inline std::uint64_t fraction_key(double k) noexcept {
  return static_cast<std::uint64_t>(std::llround(k * 1e6));
}

inline double standard_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace attreval
