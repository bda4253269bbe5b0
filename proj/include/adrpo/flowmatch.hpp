#pragma once

// Straight-line conditional flow matching: interpolation paths, the CFM
// regression loss and a fixed-step Euler sampler.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "adrpo/error.hpp"
#include "adrpo/netcore.hpp"

namespace adrpo {

template <std::floating_point T>
struct FlowPath {
  std::vector<T> x0, x1, xt, ut;
  T t = 0;
};

template <std::floating_point T>
FlowPath<T> make_path(std::span<const T> x0, std::span<const T> x1, T t) {
  if (!(t >= T(0) && t <= T(1))) throw DomainError("path time must lie in [0, 1]");
  if (x0.size() != x1.size()) throw ShapeError("path endpoints differ in dimension");
  FlowPath<T> p;
  p.x0.assign(x0.begin(), x0.end());
  p.x1.assign(x1.begin(), x1.end());
  p.t = t;
  p.xt.resize(x0.size());
  p.ut.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    p.xt[i] = (T(1) - t) * x0[i] + t * x1[i];
    p.ut[i] = x1[i] - x0[i];
  }
  return p;
}

template <std::floating_point T>
struct FlowSample {
  FlowPath<T> path;
  std::size_t context = 0;
};

/// mean_i ||v(xt_i, t_i, c_i) - ut_i||^2 and its parameter gradient.
template <std::floating_point T>
GradBuffer<T> cfm_loss(const Mlp<T>& net, std::span<const FlowSample<T>> batch) {
  if (batch.empty()) throw UsageError("cfm_loss needs a nonempty batch");
  GradBuffer<T> out(net.params().size());
  typename Mlp<T>::Tape tape;
  std::vector<T> v(net.output_dim()), up(net.output_dim());
  const T inv_n = T(1) / static_cast<T>(batch.size());
  for (const auto& s : batch) {
    velocity(net, std::span<const T>(s.path.xt), s.path.t, s.context, std::span<T>(v), &tape);
    T sq = 0;
    for (std::size_t d = 0; d < v.size(); ++d) {
      const T r = v[d] - s.path.ut[d];
      sq += r * r;
      up[d] = T(2) * r * inv_n;
    }
    out.loss += sq * inv_n;
    net.backward(tape, up, out.grad);
  }
  return out;
}

struct SamplerConfig {
  std::size_t num_steps = 64;
};

/// Integrates dx/dt = v(x, t, c) from t = 0 to 1 with explicit Euler.
template <std::floating_point T>
std::vector<T> sample(const Mlp<T>& net, std::size_t context, const SamplerConfig& cfg, std::span<const T> x0) {
  if (cfg.num_steps == 0) throw UsageError("sampler needs at least one step");
  std::vector<T> x(x0.begin(), x0.end()), v(net.output_dim());
  const T h = T(1) / static_cast<T>(cfg.num_steps);
  for (std::size_t k = 0; k < cfg.num_steps; ++k) {
    velocity(net, std::span<const T>(x), static_cast<T>(k) * h, context, std::span<T>(v));
    for (std::size_t d = 0; d < x.size(); ++d) {
      x[d] += h * v[d];
      if (!std::isfinite(x[d])) throw SamplerDivergenceError(k + 1);
    }
  }
  return x;
}

}  // namespace adrpo
