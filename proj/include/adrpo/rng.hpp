#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace adrpo {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stream tags keep independent draws (contexts, generation noise, ...) decorrelated.
enum class Stream : std::uint64_t {
  kInit = 1,
  kContext = 2,
  kGeneration = 3,
  kInterpolation = 4,
  kReward = 5,
  kProbe = 6,
  kPretrain = 7,
  kEval = 8,
  kAction = 9,
};

/// Engine for the (seed, iteration, index) stream; identical keys give identical draws.
inline Rng make_stream(std::uint64_t seed, Stream tag, std::uint64_t iteration = 0,
                       std::uint64_t index = 0) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  h = splitmix64(h ^ iteration);
  h = splitmix64(h ^ index);
  return Rng(h);
}

inline std::vector<double> standard_normal(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(dim);
  for (auto& v : out) v = normal(rng);
  return out;
}

}  // namespace adrpo
