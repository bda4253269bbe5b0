#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "adrpo/flowmatch.hpp"
#include "adrpo/rng.hpp"
#include "oracles.hpp"

using namespace adrpo;
using oracle::LD;

namespace {

using V = std::vector<double>;

FlowSample<double> sample_of(const V& x0, const V& x1, double t, std::size_t c = 0) {
  return {make_path(std::span<const double>(x0), std::span<const double>(x1), t), c};
}

// Linear net v(x, t, c) = x on 2-D data with one context.
Mlp<double> identity_field() {
  Mlp<double> net(velocity_topology(2, 1, {}), Activation::kTanh);
  net.params()[0 * 4 + 0] = 1.0;
  net.params()[1 * 4 + 1] = 1.0;
  return net;
}

// Net whose output is the constant `c` (bias-only last layer).
Mlp<double> constant_field(const V& c) {
  Mlp<double> net(velocity_topology(2, 1, {3}), Activation::kTanh);
  auto p = net.params();
  const std::size_t last = 4 * 3 + 3;  // first layer weights + biases
  p[last + 2 * 3 + 0] = c[0];
  p[last + 2 * 3 + 1] = c[1];
  return net;
}

std::vector<FlowSample<double>> seeded_batch(std::uint64_t seed, std::size_t n, std::vector<V>* x0s = nullptr,
                                             std::vector<V>* x1s = nullptr, V* ts = nullptr) {
  Rng rng = make_stream(seed, Stream::kEval);
  std::vector<FlowSample<double>> batch;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x0 = standard_normal(rng, 2);
    const auto x1 = standard_normal(rng, 2);
    const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    batch.push_back(sample_of(x0, x1, t));
    if (x0s) x0s->push_back(x0);
    if (x1s) x1s->push_back(x1);
    if (ts) ts->push_back(t);
  }
  return batch;
}

}  // namespace

TEST(FlowPath, Midpoint) {
  const auto p = make_path(std::span<const double>(V{0, 0}), std::span<const double>(V{1, 2}), 0.5);
  EXPECT_EQ(p.xt, (V{0.5, 1.0}));
  EXPECT_EQ(p.ut, (V{1.0, 2.0}));
}

TEST(FlowPath, Endpoints) {
  const V x0{0.3, -1.7}, x1{2.5, 0.25};
  EXPECT_EQ(make_path(std::span<const double>(x0), std::span<const double>(x1), 0.0).xt, x0);
  EXPECT_EQ(make_path(std::span<const double>(x0), std::span<const double>(x1), 1.0).xt, x1);
}

TEST(FlowPath, DegeneratePair) {
  for (double t : {0.0, 0.3, 1.0}) {
    const auto p = make_path(std::span<const double>(V{1, 1}), std::span<const double>(V{1, 1}), t);
    EXPECT_EQ(p.xt, (V{1, 1}));
    EXPECT_EQ(p.ut, (V{0, 0}));
  }
}

TEST(FlowPath, RejectsBadArguments) {
  EXPECT_THROW(make_path(std::span<const double>(V{0, 0}), std::span<const double>(V{1, 1}), 1.01), DomainError);
  EXPECT_THROW(make_path(std::span<const double>(V{0, 0}), std::span<const double>(V{1, 1}), -0.5), DomainError);
  EXPECT_THROW(make_path(std::span<const double>(V{0, 0}), std::span<const double>(V{1, 1, 1}), 0.5), ShapeError);
}

TEST(FlowPath, InvariantsHoldOnRandomPaths) {
  oracle::Gen gen(5);
  for (int k = 0; k < 500; ++k) {
    const auto x0 = gen.vec(3, -4, 4), x1 = gen.vec(3, -4, 4);
    const double t = gen.uniform(0, 1);
    const auto p = make_path(std::span<const double>(x0), std::span<const double>(x1), t);
    for (std::size_t d = 0; d < 3; ++d) {
      EXPECT_EQ(p.xt[d], (1 - t) * x0[d] + t * x1[d]);
      EXPECT_EQ(p.ut[d], x1[d] - x0[d]);
    }
    EXPECT_EQ(p.t, t);
  }
}

TEST(CfmLoss, ZeroNetSinglePath) {
  Mlp<double> net(velocity_topology(2, 1, {4}), Activation::kTanh);
  const std::vector<FlowSample<double>> batch{sample_of({0, 0}, {1, 2}, 0.4)};
  EXPECT_DOUBLE_EQ(cfm_loss(net, std::span<const FlowSample<double>>(batch)).loss, 5.0);
}

TEST(CfmLoss, ExactFieldHasZeroLossAndGradient) {
  const auto net = constant_field({1, 2});
  std::vector<FlowSample<double>> batch;
  oracle::Gen gen(3);
  for (int i = 0; i < 6; ++i) {
    const auto x0 = gen.vec(2, -1, 1);
    batch.push_back(sample_of(x0, {x0[0] + 1, x0[1] + 2}, gen.uniform(0, 1)));
  }
  const auto g = cfm_loss(net, std::span<const FlowSample<double>>(batch));
  EXPECT_NEAR(g.loss, 0.0, 1e-28);
  for (double v : g.grad) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(CfmLoss, EmptyBatchIsUsageError) {
  Mlp<double> net(velocity_topology(2, 1, {4}), Activation::kTanh);
  EXPECT_THROW(cfm_loss(net, std::span<const FlowSample<double>>()), UsageError);
}

TEST(CfmLoss, SeededBatchMatchesScalarOracle) {
  const auto widths = velocity_topology(2, 1, {16});
  const auto net = Mlp<double>::uniform_init(widths, Activation::kTanh, 13);
  std::vector<V> x0s, x1s;
  V ts;
  const auto batch = seeded_batch(13, 8, &x0s, &x1s, &ts);

  LD want = 0;
  const auto params = oracle::widen(net.params());
  for (std::size_t i = 0; i < 8; ++i) {
    std::vector<LD> in;
    for (std::size_t d = 0; d < 2; ++d) in.push_back((1 - LD(ts[i])) * x0s[i][d] + LD(ts[i]) * x1s[i][d]);
    in.push_back(ts[i]);
    in.push_back(1);
    const auto v = oracle::forward(widths, params, oracle::Act::kTanh, in);
    for (std::size_t d = 0; d < 2; ++d) {
      const LD r = v[d] - (LD(x1s[i][d]) - x0s[i][d]);
      want += r * r;
    }
  }
  want /= 8;
  const auto got = cfm_loss(net, std::span<const FlowSample<double>>(batch));
  EXPECT_LT(oracle::rel_err(got.loss, want), 1e-12);
}

TEST(CfmLoss, GradientMatchesFiniteDifferences) {
  const auto widths = velocity_topology(2, 2, {6, 5});
  const auto net = Mlp<double>::uniform_init(widths, Activation::kSoftplus, 31);
  auto batch = seeded_batch(31, 5);
  for (std::size_t i = 0; i < batch.size(); ++i) batch[i].context = i % 2;
  const auto g = cfm_loss(net, std::span<const FlowSample<double>>(batch));
  auto f = [&](const std::vector<LD>& p) {
    LD s = 0;
    for (const auto& b : batch) {
      const auto v = oracle::forward(widths, p, oracle::Act::kSoftplus,
                                     oracle::velocity_input(b.path.xt, b.path.t, b.context, 2));
      for (std::size_t d = 0; d < 2; ++d) s += (v[d] - b.path.ut[d]) * (v[d] - b.path.ut[d]);
    }
    return s / batch.size();
  };
  const auto fd = oracle::gradient_fd(f, oracle::widen(net.params()));
  for (std::size_t i = 0; i < g.grad.size(); ++i) {
    if (std::fabs(static_cast<double>(fd[i])) <= 1e-8) continue;
    EXPECT_LT(oracle::rel_err(g.grad[i], fd[i]), 1e-6) << "coordinate " << i;
  }
}

TEST(CfmLoss, NonnegativeOnRandomNets) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto net = Mlp<double>::uniform_init(velocity_topology(2, 1, {8}), Activation::kTanh, s);
    const auto batch = seeded_batch(100 + s, 4);
    EXPECT_GT(cfm_loss(net, std::span<const FlowSample<double>>(batch)).loss, 0.0);
  }
}

TEST(Sampler, ConstantFieldIntegratesExactly) {
  const auto net = constant_field({1, 0});
  for (std::size_t n : {1u, 3u, 64u, 100u}) {
    const auto x = sample(net, 0, SamplerConfig{n}, std::span<const double>(V{0, 0}));
    EXPECT_NEAR(x[0], 1.0, 1e-12) << n;
    EXPECT_NEAR(x[1], 0.0, 1e-15) << n;
  }
}

TEST(Sampler, ZeroFieldReturnsPriorDraw) {
  Mlp<double> net(velocity_topology(2, 1, {4}), Activation::kTanh);
  const V x0{0.75, -2.5};
  EXPECT_EQ(sample(net, 0, SamplerConfig{}, std::span<const double>(x0)), x0);
}

TEST(Sampler, LinearOdeApproachesExponential) {
  const auto x = sample(identity_field(), 0, SamplerConfig{1024}, std::span<const double>(V{1, 0}));
  EXPECT_NEAR(x[0], std::numbers::e, 1e-2);
  EXPECT_EQ(x[1], 0.0);
}

TEST(Sampler, EulerIsFirstOrder) {
  const auto net = identity_field();
  auto err = [&](std::size_t n) {
    return std::fabs(sample(net, 0, SamplerConfig{n}, std::span<const double>(V{1, 0}))[0] - std::numbers::e);
  };
  for (std::size_t n : {32u, 64u, 128u, 256u}) {
    const double ratio = err(n) / err(2 * n);
    EXPECT_GT(ratio, 1.9) << n;
    EXPECT_LT(ratio, 2.1) << n;
  }
}

TEST(Sampler, DivergenceReportsStep) {
  Mlp<double> net(velocity_topology(2, 1, {}), Activation::kTanh);
  net.params()[0] = 1e200;
  try {
    sample(net, 0, SamplerConfig{8}, std::span<const double>(V{1e200, 0}));
    FAIL() << "expected sampler divergence";
  } catch (const SamplerDivergenceError& e) {
    EXPECT_EQ(e.step(), 1u);
  }
  EXPECT_THROW(sample(net, 0, SamplerConfig{0}, std::span<const double>(V{0, 0})), UsageError);
}
