#pragma once

// Independent reference computations used by the unit tests. Nothing here
// calls into the library's numeric code: the forward pass is re-derived from
// the documented parameter layout (per layer: out x in weights row-major,
// then out biases) and evaluated in long double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace oracle {

using LD = long double;

enum class Act { kTanh, kSoftplus };

inline LD act(Act a, LD z) {
  if (a == Act::kTanh) return std::tanh(z);
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Scalar-by-scalar forward pass over a flat parameter vector.
inline std::vector<LD> forward(const std::vector<std::size_t>& widths, const std::vector<LD>& params, Act a,
                               const std::vector<LD>& input) {
  std::vector<LD> h = input;
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::vector<LD> z(out);
    for (std::size_t j = 0; j < out; ++j) {
      LD acc = params[off + in * out + j];
      for (std::size_t i = 0; i < in; ++i) acc += params[off + j * in + i] * h[i];
      const bool last = l + 2 == widths.size();
      z[j] = last ? acc : act(a, acc);
    }
    off += (in + 1) * out;
    h = std::move(z);
  }
  return h;
}

/// (x, t, one-hot c) input layout for a velocity net.
inline std::vector<LD> velocity_input(const std::vector<double>& x, double t, std::size_t c, std::size_t contexts) {
  std::vector<LD> in(x.begin(), x.end());
  in.push_back(t);
  for (std::size_t k = 0; k < contexts; ++k) in.push_back(k == c ? 1 : 0);
  return in;
}

/// Five-point central difference of f along every coordinate of p.
inline std::vector<LD> gradient_fd(const std::function<LD(const std::vector<LD>&)>& f, std::vector<LD> p,
                                   LD h = 1e-5L) {
  std::vector<LD> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const LD orig = p[i];
    auto at = [&](LD d) {
      p[i] = orig + d;
      const LD v = f(p);
      p[i] = orig;
      return v;
    };
    g[i] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
  }
  return g;
}

template <class Range>
std::vector<LD> widen(const Range& v) {
  return std::vector<LD>(v.begin(), v.end());
}

/// Relative error with an absolute floor so near-zero coordinates do not blow up.
inline double rel_err(LD a, LD b, LD floor = 1e-8L) {
  const LD den = std::max({std::fabs(a), std::fabs(b), floor});
  return static_cast<double>(std::fabs(a - b) / den);
}

/// Minimal generator for property tests: a seeded engine plus helpers.
struct Gen {
  std::mt19937_64 eng;
  explicit Gen(std::uint64_t seed) : eng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(eng); }
  std::vector<double> vec(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
};

}  // namespace oracle
