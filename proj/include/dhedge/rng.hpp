#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dhedge {

// mt19937_64 output is fully specified by the standard; the distributions in
// <random> are not, so uniform draws are built from raw engine output to keep
// streams bit-identical across standard libraries.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent child seed for a named sub-stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

// Uniform on [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) noexcept {
  double v = lo + (hi - lo) * uniform01(rng);
  return v < hi ? v : std::nextafter(hi, lo);
}

inline bool bernoulli(Rng& rng, double p) noexcept { return uniform01(rng) < p; }

// Uniform index in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) noexcept {
  auto i = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

}  // namespace dhedge
