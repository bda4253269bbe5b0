#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "adrpo/fmtrain.hpp"
#include "oracles.hpp"

using namespace adrpo;
using oracle::LD;

namespace {

using V = std::vector<double>;

const auto kTiny = velocity_topology(2, 1, {6});

struct Fixture {
  Net theta = Net::uniform_init(kTiny, Activation::kTanh, 42);
  Net ref = Net::uniform_init(kTiny, Activation::kTanh, 43);
  std::vector<Sample> batch;
  V clipped{1.0, -0.5, 0.25, -1.0};
  V rewards{0.3, 0.9, -0.2, 0.4};

  Fixture() {
    Rng rng = make_stream(42, Stream::kEval);
    for (int i = 0; i < 4; ++i) {
      const auto x0 = standard_normal(rng, 2);
      const auto x1 = standard_normal(rng, 2);
      const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      batch.push_back({make_path(std::span<const double>(x0), std::span<const double>(x1), t), 0});
    }
  }
  std::span<const Sample> span() const { return batch; }
};

// mean_i [ a_i ||v - u||^2 + b_i ||v - v_ref||^2 ] evaluated in long double from
// the parameter layout alone.
LD loss_oracle(const std::vector<std::size_t>& widths, const std::vector<LD>& theta, const std::vector<LD>& ref,
               const std::vector<Sample>& batch, const std::vector<LD>& a, const std::vector<LD>& b) {
  LD total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto in = oracle::velocity_input(batch[i].path.xt, batch[i].path.t, batch[i].context, 1);
    const auto v = oracle::forward(widths, theta, oracle::Act::kTanh, in);
    const auto vr = oracle::forward(widths, ref, oracle::Act::kTanh, in);
    LD fit = 0, reg = 0;
    for (std::size_t d = 0; d < v.size(); ++d) {
      fit += (v[d] - batch[i].path.ut[d]) * (v[d] - batch[i].path.ut[d]);
      reg += (v[d] - vr[d]) * (v[d] - vr[d]);
    }
    total += a[i] * fit + b[i] * reg;
  }
  return total / batch.size();
}

Net load_two_mode_reference() {
  PretrainOptions o;
  o.target.kind = TargetKind::kMixture;
  o.target.means = {{-2.0, 0.0}, {2.0, 0.0}};
  o.target.std = 0.5;
  o.hidden = {32, 32};
  o.steps = 1500;
  o.w2_threshold = 10;
  o.eval_points = 64;
  return pretrain_reference(o).net;
}

RewardEnv target_point_env() {
  RewardEnv env;
  env.kind = RewardKind::kTargetPoint;
  env.centers = {{1.0, 1.0}};
  return env;
}

std::uint64_t param_hash(const Net& n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (double p : n.params()) {
    std::uint64_t bits;
    std::memcpy(&bits, &p, sizeof bits);
    h = (h ^ bits) * 1099511628211ULL;
  }
  return h;
}

}  // namespace

TEST(AdrpoFmLoss, MatchesScalarOracleOnSeededBatch) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  std::vector<LD> a(f.clipped.begin(), f.clipped.end()), b;
  for (double x : f.clipped) b.push_back(LD(1) - x);
  const LD want = loss_oracle(kTiny, oracle::widen(f.theta.params()), oracle::widen(f.ref.params()), f.batch, a, b);
  const auto got = adrpo_fm_loss(f.theta, f.ref, f.span(), f.clipped, cfg);
  EXPECT_LT(oracle::rel_err(got.loss, want), 1e-12);
}

TEST(AdrpoFmLoss, FixedBetaMatchesOracleWithPinnedCoefficient) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  std::vector<LD> a(f.clipped.begin(), f.clipped.end()), b(4, LD(1));
  const LD want = loss_oracle(kTiny, oracle::widen(f.theta.params()), oracle::widen(f.ref.params()), f.batch, a, b);
  EXPECT_LT(oracle::rel_err(adv_fixed_beta_loss(f.theta, f.ref, f.span(), f.clipped, cfg).loss, want), 1e-12);
}

TEST(AdrpoFmLoss, GradientMatchesFiniteDifferences) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  const auto g = adrpo_fm_loss(f.theta, f.ref, f.span(), f.clipped, cfg);
  std::vector<LD> a(f.clipped.begin(), f.clipped.end()), b;
  for (double x : f.clipped) b.push_back(LD(1) - x);
  const auto ref = oracle::widen(f.ref.params());
  const auto fd = oracle::gradient_fd([&](const std::vector<LD>& p) { return loss_oracle(kTiny, p, ref, f.batch, a, b); },
                                      oracle::widen(f.theta.params()));
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (std::fabs(static_cast<double>(fd[i])) <= 1e-8) continue;
    EXPECT_LT(oracle::rel_err(g.grad[i], fd[i]), 1e-6) << i;
  }
}

TEST(AdrpoFmLoss, ZeroAdvantageIsPureRegularization) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  const V zeros(4, 0.0);
  std::vector<LD> a(4, 0), b(4, 1);
  const LD want = loss_oracle(kTiny, oracle::widen(f.theta.params()), oracle::widen(f.ref.params()), f.batch, a, b);
  EXPECT_LT(oracle::rel_err(adrpo_fm_loss(f.theta, f.ref, f.span(), zeros, cfg).loss, want), 1e-12);
}

TEST(AdrpoFmLoss, RegularizerVanishesAtReference) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  const std::vector<Sample> one{f.batch[0]};
  const V a{1.0};
  const double loss = adrpo_fm_loss(f.ref, f.ref, std::span<const Sample>(one), a, cfg).loss;
  EXPECT_DOUBLE_EQ(loss, cfm_loss(f.ref, std::span<const Sample>(one)).loss);
}

TEST(AdrpoFmLoss, AffineInEachAdvantage) {
  Fixture f;
  const auto cfg = AdaptiveRegConfig::flow_defaults();
  for (std::size_t i = 0; i < 4; ++i) {
    auto at = [&](double a) {
      V c = f.clipped;
      c[i] = a;
      return adrpo_fm_loss(f.theta, f.ref, f.span(), c, cfg).loss;
    };
    const double l0 = at(-0.8), l1 = at(0.1), l2 = at(0.7);
    // Collinearity: the midpoint-interpolated value from the outer points.
    const double predicted = l0 + (l2 - l0) * (0.1 + 0.8) / 1.5;
    EXPECT_LT(std::fabs(l1 - predicted), 1e-10) << i;
  }
}

TEST(AdrpoFmLoss, SignReversalOfCfmGradient) {
  Fixture f;
  const std::vector<Sample> one{f.batch[1]};
  for (double a : {0.3, 0.75, 1.0}) {
    const auto gp = weighted_flow_loss(f.theta, nullptr, std::span<const Sample>(one), V{a}, V{0.0});
    const auto gm = weighted_flow_loss(f.theta, nullptr, std::span<const Sample>(one), V{-a}, V{0.0});
    for (std::size_t k = 0; k < gp.grad.size(); ++k) EXPECT_EQ(gm.grad[k], -gp.grad[k]);
  }
}

TEST(AdrpoFmLoss, ZeroAdvantageSampleAddsNoFitGradient) {
  Fixture f;
  const std::vector<Sample> one{f.batch[2]};
  const auto g = weighted_flow_loss(f.theta, nullptr, std::span<const Sample>(one), V{0.0}, V{0.0});
  EXPECT_EQ(g.loss, 0.0);
  for (double x : g.grad) EXPECT_EQ(x, 0.0);
}

TEST(AdrpoFmLoss, ClipRangeIsEnforced) {
  Fixture f;
  EXPECT_THROW(adrpo_fm_loss(f.theta, f.ref, f.span(), V{2.0, 0, 0, 0}, AdaptiveRegConfig::flow_defaults()),
               ContractError);
  EXPECT_THROW(adrpo_fm_loss(f.theta, f.ref, f.span(), V{0, 0}, AdaptiveRegConfig::flow_defaults()), ShapeError);
}

TEST(AdrpoFmLoss, NonFiniteLossIsDivergence) {
  Fixture f;
  f.theta.params()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    adrpo_fm_loss(f.theta, f.ref, f.span(), f.clipped, AdaptiveRegConfig::flow_defaults(), 17);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 17u);
  }
}

TEST(OrwLoss, EqualRewardsReduceToCfmPlusRegularizer) {
  Fixture f;
  const double beta = 0.7;
  const auto orw = orw_w2_loss(f.theta, f.ref, f.span(), V(4, 0.3), beta);
  const auto cfm = cfm_loss(f.theta, f.span());
  const auto reg = weighted_flow_loss(f.theta, &f.ref, f.span(), V(4, 0.0), V(4, beta));
  EXPECT_NEAR(orw.loss, cfm.loss + reg.loss, 1e-12);
  for (std::size_t k = 0; k < orw.grad.size(); ++k) EXPECT_NEAR(orw.grad[k], cfm.grad[k] + reg.grad[k], 1e-12);
}

TEST(OrwLoss, WeightsAreScaledSoftmax) {
  const auto w = reward_weights(std::span<const double>(V{0.0, std::log(3.0)}));
  EXPECT_NEAR(w[0], 0.5, 1e-15);
  EXPECT_NEAR(w[1], 1.5, 1e-15);
  const auto big = reward_weights(std::span<const double>(V{1000.0, 1000.0, 999.0}));
  for (double x : big) EXPECT_TRUE(std::isfinite(x));
  EXPECT_NEAR(big[0] + big[1] + big[2], 3.0, 1e-12);
}

TEST(RaftLoss, TopOneOfFourIsArgmaxSample) {
  Fixture f;
  EXPECT_EQ(raft_keep(4), 1u);
  EXPECT_EQ(raft_keep(64), 16u);
  EXPECT_EQ(raft_keep(5), 2u);
  const auto got = raft_loss(f.theta, f.span(), f.rewards);
  const std::vector<Sample> best{f.batch[1]};
  const auto want = cfm_loss(f.theta, std::span<const Sample>(best));
  EXPECT_EQ(got.loss, want.loss);
  EXPECT_EQ(got.grad, want.grad);
}

TEST(RaftLoss, TiesKeepEarlierIndex) {
  EXPECT_EQ(raft_selection(std::span<const double>(V{1, 3, 3, 0, 3, 2, 1, 0})), (std::vector<std::size_t>{1, 2}));
}

TEST(Pretrain, StandardNormalTargetNeedsNoTransport) {
  // The zero field carries the prior onto itself; the W2 left is sampling noise.
  Net zero(velocity_topology(2, 1, {8}), Activation::kTanh);
  TargetSpec t;
  const double w2 = reference_w2(zero, t, SamplerConfig{}, 512, 0);
  EXPECT_LT(w2, 0.35);
}

TEST(Pretrain, ShiftedGaussianReachesThreshold) {
  PretrainOptions o;
  o.target.kind = TargetKind::kGaussian;
  o.target.means = {{3.0, 3.0}};
  o.target.std = 0.5;
  o.steps = 5000;
  o.hidden = {32, 32};
  o.w2_threshold = 0.35;
  const auto r = pretrain_reference(o);
  EXPECT_LT(r.w2, 0.35);
}

TEST(Pretrain, TwoModeMixtureOccupiesBothModes) {
  const Net net = load_two_mode_reference();
  Rng rng = make_stream(123, Stream::kEval);
  int left = 0, right = 0;
  for (int i = 0; i < 512; ++i) {
    const auto x0 = standard_normal(rng, 2);
    const auto x = sample(net, 0, SamplerConfig{}, std::span<const double>(x0));
    (x[0] < 0 ? left : right) += 1;
  }
  EXPECT_GE(left, 128);
  EXPECT_GE(right, 128);
}

TEST(Pretrain, FailureReportsFinalW2) {
  PretrainOptions o;
  o.target.kind = TargetKind::kGaussian;
  o.target.means = {{5.0, 5.0}};
  o.steps = 0;
  o.hidden = {4};
  o.eval_points = 32;
  try {
    pretrain_reference(o);
    FAIL() << "expected a pretraining failure";
  } catch (const PretrainError& e) {
    EXPECT_GT(e.final_w2(), 0.35);
  }
}

class Trainer : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { reference_ = new Net(load_two_mode_reference()); }
  static void TearDownTestSuite() { delete reference_; }

  static FmTrainOptions options(FmMethod m, double lr, std::uint64_t seed = 3) {
    FmTrainOptions o;
    o.method = m;
    o.env.kind = RewardKind::kRegion;
    o.env.centers = {{2.0, 0.0}};
    o.env.radius = 1.5;
    o.lr = lr;
    o.batch_size = 16;
    o.probe_count = 32;
    o.sampler.num_steps = 16;
    o.seed = seed;
    return o;
  }

  static Net* reference_;
};
Net* Trainer::reference_ = nullptr;

TEST_F(Trainer, ZeroLearningRateLeavesParamsAndLogsMetrics) {
  FmTrainer t(*reference_, options(FmMethod::kAdrpo, 0.0));
  const auto before = t.policy();
  const auto rec = t.step();
  EXPECT_EQ(t.policy(), before);
  EXPECT_EQ(rec.iteration, 1u);
  EXPECT_EQ(rec.method, "adrpo");
  ASSERT_TRUE(rec.diversity && rec.w2_to_reference && rec.velocity_divergence);
  EXPECT_EQ(*rec.velocity_divergence, 0.0);
  EXPECT_EQ(*rec.w2_to_reference, 0.0);
}

TEST_F(Trainer, SameSeedGivesIdenticalRecords) {
  FmTrainer a(*reference_, options(FmMethod::kAdrpo, 0.0)), b(*reference_, options(FmMethod::kAdrpo, 0.0));
  for (int i = 0; i < 2; ++i) EXPECT_EQ(a.step(), b.step());
  FmTrainer c(*reference_, options(FmMethod::kAdrpo, 0.05)), d(*reference_, options(FmMethod::kAdrpo, 0.05));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(c.step(), d.step());
  EXPECT_EQ(c.policy(), d.policy());
}

TEST_F(Trainer, ReferenceNeverChanges) {
  FmTrainer t(*reference_, options(FmMethod::kAdrpo, 0.05));
  const auto h = param_hash(*reference_);
  for (int i = 0; i < 5; ++i) {
    t.step();
    EXPECT_EQ(param_hash(t.reference()), h);
  }
  EXPECT_NE(param_hash(t.policy()), h);
}

TEST_F(Trainer, ForcedZeroAdvantageMatchesFixedBeta) {
  auto oa = options(FmMethod::kAdrpo, 0.05);
  auto ob = options(FmMethod::kAdvFixedBeta, 0.05);
  oa.force_zero_advantage = ob.force_zero_advantage = true;
  FmTrainer a(*reference_, oa), b(*reference_, ob);
  for (int i = 0; i < 5; ++i) {
    a.step();
    b.step();
    ASSERT_EQ(a.policy(), b.policy()) << "iteration " << i + 1;
  }
}

TEST_F(Trainer, BetaStatisticsStayInBounds) {
  for (auto m : {FmMethod::kAdrpo, FmMethod::kOrwW2, FmMethod::kRaft, FmMethod::kAdvFixedBeta}) {
    FmTrainer t(*reference_, options(m, 0.05));
    for (int i = 0; i < 3; ++i) {
      const auto r = t.step();
      EXPECT_GE(r.beta_tot.min, 0.0);
      EXPECT_LE(r.beta_tot.max, 2.0);
      EXPECT_LE(r.beta_tot.min, r.beta_tot.mean);
      EXPECT_LE(r.beta_tot.mean, r.beta_tot.max);
    }
  }
}

TEST_F(Trainer, FailedStepLeavesStateUntouched) {
  Net poisoned = *reference_;
  poisoned.params()[3] = std::numeric_limits<double>::quiet_NaN();
  const auto h = param_hash(poisoned);
  FmTrainer t(*reference_, options(FmMethod::kAdrpo, 0.05), poisoned);
  EXPECT_THROW(t.step(), Error);
  EXPECT_EQ(t.iteration(), 0u);
  EXPECT_EQ(param_hash(t.policy()), h);
}

TEST_F(Trainer, RejectsMismatchedEnvironment) {
  auto o = options(FmMethod::kAdrpo, 0.05);
  o.env.centers = {{0.0, 0.0}, {1.0, 1.0}};
  EXPECT_THROW(FmTrainer(*reference_, o), ShapeError);
  o = options(FmMethod::kAdrpo, 0.05);
  o.env.centers = {{0.0, 0.0, 0.0}};
  EXPECT_THROW(FmTrainer(*reference_, o), ShapeError);
}

TEST(TrainerEndToEnd, TargetPointRewardImproves) {
  PretrainOptions po;
  po.hidden = {16, 16};
  po.steps = 0;
  po.w2_threshold = 1e9;
  po.eval_points = 8;
  const Net ref = pretrain_reference(po).net;
  FmTrainOptions o;
  o.env = target_point_env();
  o.batch_size = 32;
  o.probe_count = 16;
  o.sampler.num_steps = 16;
  o.optimizer = OptimizerKind::kAdam;
  o.lr = 1e-3;
  o.seed = 11;
  FmTrainer t(ref, o);
  double first = 0, last = 0;
  for (int i = 0; i < 400; ++i) {
    const double r = t.step().reward_mean;
    if (i < 50) first += r;
    if (i >= 350) last += r;
  }
  EXPECT_GT(last / 50, first / 50);
}

TEST(FmMethodNames, RoundTrip) {
  for (auto m : {FmMethod::kAdrpo, FmMethod::kOrwW2, FmMethod::kRaft, FmMethod::kAdvFixedBeta})
    EXPECT_EQ(fm_method_from_string(to_string(m)), m);
  EXPECT_THROW(fm_method_from_string("dpo"), ValidationError);
  EXPECT_EQ(optimizer_from_string("adam"), OptimizerKind::kAdam);
}
