#pragma once

// Small feedforward network with a hand-written reverse pass. Used as the
// conditional velocity field v(x, t, c) of the flow models.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adrpo/error.hpp"
#include "adrpo/rng.hpp"

namespace adrpo {

/// Hidden-layer nonlinearity. The output layer is always linear.
enum class Activation : std::uint8_t {
  kTanh = 0,
  kSoftplus = 1,  // smooth ReLU
};

inline std::string to_string(Activation a) { return a == Activation::kTanh ? "tanh" : "softplus"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "softplus" || s == "smooth-relu") return Activation::kSoftplus;
  throw UsageError("unknown activation '" + s + "'");
}

template <std::floating_point T>
struct GradBuffer {
  std::vector<T> grad;
  T loss = 0;

  GradBuffer() = default;
  explicit GradBuffer(std::size_t n) : grad(n, T(0)) {}

  GradBuffer& operator+=(const GradBuffer& other) {
    if (other.grad.size() != grad.size()) throw ShapeError("gradient buffers differ in length");
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += other.grad[i];
    loss += other.loss;
    return *this;
  }

  void scale(T s) {
    for (auto& g : grad) g *= s;
    loss *= s;
  }
};

template <std::floating_point T>
class Mlp {
 public:
  /// Activations recorded by a forward pass; consumed by backward().
  struct Tape {
    std::vector<std::size_t> widths;
    std::vector<std::vector<T>> pre;   // per layer, before the nonlinearity
    std::vector<std::vector<T>> post;  // post[0] is the input
    bool recorded = false;
  };

  Mlp() = default;

  /// Zero-initialized network with the given layer widths (input first).
  Mlp(std::vector<std::size_t> widths, Activation activation)
      : widths_(std::move(widths)), activation_(activation) {
    if (widths_.size() < 2) throw ShapeError("topology needs at least input and output widths");
    for (auto w : widths_)
      if (w == 0) throw ShapeError("layer widths must be positive");
    params_.assign(param_count(widths_), T(0));
  }

  /// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Mlp uniform_init(std::vector<std::size_t> widths, Activation activation, std::uint64_t seed) {
    Mlp net(std::move(widths), activation);
    Rng rng = make_stream(seed, Stream::kInit);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
      const std::size_t in = net.widths_[l], out = net.widths_[l + 1];
      const double s = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-s, s);
      for (std::size_t k = 0; k < (in + 1) * out; ++k) net.params_[off + k] = static_cast<T>(u(rng));
      off += (in + 1) * out;
    }
    return net;
  }

  static std::size_t param_count(const std::vector<std::size_t>& widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += (widths[l] + 1) * widths[l + 1];
    return n;
  }

  const std::vector<std::size_t>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t output_dim() const { return widths_.back(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  std::span<const T> params() const { return params_; }
  std::span<T> params() { return params_; }

  void forward(std::span<const T> input, std::span<T> output) const {
    check_io(input.size(), output.size());
    thread_local std::vector<T> a, b;
    a.assign(input.begin(), input.end());
    std::size_t off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      const bool last = l + 1 == num_layers();
      b.resize(out);
      affine(off, in, out, a, b);
      if (!last)
        for (auto& z : b) z = activate(z);
      off += (in + 1) * out;
      std::swap(a, b);
    }
    std::copy(a.begin(), a.end(), output.begin());
  }

  std::vector<T> forward(std::span<const T> input) const {
    std::vector<T> out(output_dim());
    forward(input, out);
    return out;
  }

  /// Forward pass that records what backward() needs.
  void forward(std::span<const T> input, std::span<T> output, Tape& tape) const {
    check_io(input.size(), output.size());
    if (tape.widths != widths_) {
      tape.widths = widths_;
      tape.pre.assign(num_layers(), {});
      tape.post.assign(num_layers() + 1, {});
    }
    tape.post[0].assign(input.begin(), input.end());
    std::size_t off = 0;
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      auto& z = tape.pre[l];
      auto& h = tape.post[l + 1];
      z.resize(out);
      h.resize(out);
      affine(off, in, out, tape.post[l], z);
      const bool last = l + 1 == num_layers();
      for (std::size_t j = 0; j < out; ++j) h[j] = last ? z[j] : activate(z[j]);
      off += (in + 1) * out;
    }
    std::copy(tape.post.back().begin(), tape.post.back().end(), output.begin());
    tape.recorded = true;
  }

  /// Accumulates d(upstream . output)/d(params) into grad.
  void backward(const Tape& tape, std::span<const T> upstream, std::span<T> grad) const {
    if (!tape.recorded) throw StateError("backward called without a recorded forward pass");
    if (tape.widths != widths_) throw StateError("tape was recorded on a different topology");
    if (upstream.size() != output_dim()) throw ShapeError("upstream size does not match output width");
    if (grad.size() != params_.size()) throw ShapeError("gradient length does not match parameter count");

    thread_local std::vector<T> delta, prev;
    delta.assign(upstream.begin(), upstream.end());
    std::size_t off = params_.size();
    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      off -= (in + 1) * out;
      if (l + 1 != num_layers())
        for (std::size_t j = 0; j < out; ++j) delta[j] *= activate_grad(tape.pre[l][j], tape.post[l + 1][j]);
      const auto& x = tape.post[l];
      T* gw = grad.data() + off;
      T* gb = gw + in * out;
      for (std::size_t j = 0; j < out; ++j) {
        const T d = delta[j];
        T* row = gw + j * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * x[i];
        gb[j] += d;
      }
      if (l == 0) break;
      prev.assign(in, T(0));
      const T* w = params_.data() + off;
      for (std::size_t j = 0; j < out; ++j) {
        const T d = delta[j];
        const T* row = w + j * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
      }
      std::swap(delta, prev);
    }
  }

  bool operator==(const Mlp& other) const = default;

 private:
  void check_io(std::size_t in, std::size_t out) const {
    if (in != input_dim())
      throw ShapeError("input has " + std::to_string(in) + " entries, network expects " +
                       std::to_string(input_dim()));
    if (out != output_dim()) throw ShapeError("output buffer does not match network output width");
  }

  void affine(std::size_t off, std::size_t in, std::size_t out, const std::vector<T>& x,
              std::vector<T>& z) const {
    const T* w = params_.data() + off;
    const T* bias = w + in * out;
    for (std::size_t j = 0; j < out; ++j) {
      T acc = bias[j];
      const T* row = w + j * in;
      for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
      z[j] = acc;
    }
  }

  T activate(T z) const {
    if (activation_ == Activation::kTanh) return std::tanh(z);
    // log(1 + e^z) without overflow
    return z > T(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  }

  T activate_grad(T z, T h) const {
    if (activation_ == Activation::kTanh) return T(1) - h * h;
    return T(1) / (T(1) + std::exp(-z));
  }

  std::vector<std::size_t> widths_;
  std::vector<T> params_;
  Activation activation_ = Activation::kTanh;
};

/// Widths for a velocity net on `data_dim`-dimensional points with one-hot contexts.
inline std::vector<std::size_t> velocity_topology(std::size_t data_dim, std::size_t num_contexts,
                                                  const std::vector<std::size_t>& hidden) {
  std::vector<std::size_t> w{data_dim + 1 + num_contexts};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(data_dim);
  return w;
}

template <std::floating_point T>
std::size_t num_contexts(const Mlp<T>& net) {
  if (net.input_dim() < net.output_dim() + 2)
    throw ShapeError("network input is too narrow for (x, t, one-hot context)");
  return net.input_dim() - net.output_dim() - 1;
}

/// Packs (x, t, one-hot(c)) into the network input layout.
template <std::floating_point T>
void velocity_input(const Mlp<T>& net, std::span<const T> x, T t, std::size_t context,
                    std::span<T> input) {
  if (x.size() != net.output_dim())
    throw ShapeError("point dimension " + std::to_string(x.size()) + " does not match network output " +
                     std::to_string(net.output_dim()));
  const std::size_t nc = num_contexts(net);
  if (context >= nc) throw ShapeError("context " + std::to_string(context) + " outside embedding width");
  if (!(t >= T(0) && t <= T(1))) throw DomainError("time must lie in [0, 1]");
  std::copy(x.begin(), x.end(), input.begin());
  input[x.size()] = t;
  std::fill(input.begin() + x.size() + 1, input.end(), T(0));
  input[x.size() + 1 + context] = T(1);
}

/// v(x, t, c).
template <std::floating_point T>
std::vector<T> velocity(const Mlp<T>& net, std::span<const T> x, T t, std::size_t context) {
  std::vector<T> in(net.input_dim());
  velocity_input(net, x, t, context, std::span<T>(in));
  return net.forward(std::span<const T>(in));
}

template <std::floating_point T>
void velocity(const Mlp<T>& net, std::span<const T> x, T t, std::size_t context, std::span<T> out,
              typename Mlp<T>::Tape* tape = nullptr) {
  thread_local std::vector<T> in;
  in.resize(net.input_dim());
  velocity_input(net, x, t, context, std::span<T>(in));
  if (tape)
    net.forward(std::span<const T>(in), out, *tape);
  else
    net.forward(std::span<const T>(in), out);
}

/// params - lr * grad. Throws DivergenceError if the gradient is not finite.
template <std::floating_point T>
Mlp<T> sgd_step(Mlp<T> net, const GradBuffer<T>& grad, T lr, std::size_t iteration = 0) {
  if (!(lr > T(0))) throw DomainError("learning rate must be positive");
  auto p = net.params();
  if (grad.grad.size() != p.size()) throw ShapeError("gradient length does not match parameter count");
  for (auto g : grad.grad)
    if (!std::isfinite(g)) throw DivergenceError("non-finite gradient", iteration);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * grad.grad[i];
  return net;
}

/// Adam moments; an optional alternative to plain SGD.
template <std::floating_point T>
class Adam {
 public:
  explicit Adam(std::size_t n, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : m_(n, T(0)), v_(n, T(0)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > T(0))) throw DomainError("learning rate must be positive");
  }

  void step(Mlp<T>& net, const GradBuffer<T>& grad, std::size_t iteration = 0) {
    auto p = net.params();
    if (grad.grad.size() != p.size() || m_.size() != p.size())
      throw ShapeError("gradient length does not match parameter count");
    for (auto g : grad.grad)
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient", iteration);
    ++t_;
    const T c1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T c2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T g = grad.grad[i];
      m_[i] = beta1_ * m_[i] + (T(1) - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (T(1) - beta2_) * g * g;
      p[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

 private:
  std::vector<T> m_, v_;
  T lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace adrpo
