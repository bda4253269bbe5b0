#pragma once

// Online fine-tuning of a flow-matching model: the advantage-weighted,
// adaptively regularized objective and the fixed-regularization baselines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adrpo/advantage.hpp"
#include "adrpo/distributions.hpp"
#include "adrpo/error.hpp"
#include "adrpo/flowmatch.hpp"
#include "adrpo/metrics.hpp"
#include "adrpo/netcore.hpp"
#include "adrpo/rng.hpp"

namespace adrpo {

using Net = Mlp<double>;
using Sample = FlowSample<double>;

enum class FmMethod { kAdrpo, kOrwW2, kRaft, kAdvFixedBeta };

inline std::string to_string(FmMethod m) {
  switch (m) {
    case FmMethod::kAdrpo: return "adrpo";
    case FmMethod::kOrwW2: return "orw-w2";
    case FmMethod::kRaft: return "raft";
    case FmMethod::kAdvFixedBeta: return "adv-fixed-beta";
  }
  return "?";
}

inline FmMethod fm_method_from_string(const std::string& s) {
  if (s == "adrpo") return FmMethod::kAdrpo;
  if (s == "orw-w2") return FmMethod::kOrwW2;
  if (s == "raft") return FmMethod::kRaft;
  if (s == "adv-fixed-beta") return FmMethod::kAdvFixedBeta;
  throw ValidationError("method", "unknown flow-matching method '" + s + "'");
}

enum class OptimizerKind { kSgd, kAdam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ValidationError("optimizer.kind", "unknown optimizer '" + s + "'");
}

// ---------------------------------------------------------------------------
// Losses

/// mean_i [ cfm_w_i ||v(xt_i) - ut_i||^2 + reg_w_i ||v(xt_i) - v_ref(xt_i)||^2 ]
inline GradBuffer<double> weighted_flow_loss(const Net& theta, const Net* reference, std::span<const Sample> batch,
                                             std::span<const double> cfm_w, std::span<const double> reg_w,
                                             std::size_t iteration = 0) {
  if (batch.empty()) throw UsageError("flow loss needs a nonempty batch");
  if (cfm_w.size() != batch.size() || reg_w.size() != batch.size())
    throw ShapeError("loss weights do not match the batch size");
  GradBuffer<double> out(theta.params().size());
  Net::Tape tape;
  const std::size_t dim = theta.output_dim();
  std::vector<double> v(dim), vref(dim, 0.0), up(dim);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    velocity(theta, std::span<const double>(s.path.xt), s.path.t, s.context, std::span<double>(v), &tape);
    const bool with_ref = reference != nullptr && reg_w[i] != 0.0;
    if (with_ref) velocity(*reference, std::span<const double>(s.path.xt), s.path.t, s.context, std::span<double>(vref));
    double fit = 0, reg = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double rf = v[d] - s.path.ut[d];
      const double rr = with_ref ? v[d] - vref[d] : 0.0;
      fit += rf * rf;
      reg += rr * rr;
      up[d] = 2.0 * (cfm_w[i] * rf + reg_w[i] * rr) * inv_n;
    }
    out.loss += (cfm_w[i] * fit + reg_w[i] * reg) * inv_n;
    theta.backward(tape, up, out.grad);
  }
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite flow loss", iteration);
  return out;
}

/// Advantage-weighted CFM term plus the per-sample coefficient (beta0 - A) on the
/// velocity-space W2 proxy. `clipped` must already be clipped to [a_min, a_max].
inline GradBuffer<double> adrpo_fm_loss(const Net& theta, const Net& reference, std::span<const Sample> batch,
                                        std::span<const double> clipped, const AdaptiveRegConfig& cfg,
                                        std::size_t iteration = 0) {
  std::vector<double> coef(clipped.size());
  for (std::size_t i = 0; i < clipped.size(); ++i) coef[i] = beta_tot(cfg, clipped[i]);
  return weighted_flow_loss(theta, &reference, batch, clipped, coef, iteration);
}

/// Same objective with the coefficient pinned at beta0.
inline GradBuffer<double> adv_fixed_beta_loss(const Net& theta, const Net& reference, std::span<const Sample> batch,
                                              std::span<const double> clipped, const AdaptiveRegConfig& cfg,
                                              std::size_t iteration = 0) {
  std::vector<double> coef(clipped.size(), cfg.beta0);
  return weighted_flow_loss(theta, &reference, batch, clipped, coef, iteration);
}

/// w_i = B * softmax(R)_i: nonnegative, mean one, uniform for equal rewards.
inline std::vector<double> reward_weights(std::span<const double> rewards) {
  if (rewards.empty()) return {};
  const double mx = *std::max_element(rewards.begin(), rewards.end());
  std::vector<double> w(rewards.size());
  double z = 0;
  for (std::size_t i = 0; i < rewards.size(); ++i) z += (w[i] = std::exp(rewards[i] - mx));
  const double scale = static_cast<double>(rewards.size()) / z;
  for (auto& x : w) x *= scale;
  return w;
}

/// Reward-weighted CFM with a fixed W2 coefficient.
inline GradBuffer<double> orw_w2_loss(const Net& theta, const Net& reference, std::span<const Sample> batch,
                                      std::span<const double> rewards, double beta, std::size_t iteration = 0) {
  const auto w = reward_weights(rewards);
  std::vector<double> coef(batch.size(), beta);
  return weighted_flow_loss(theta, &reference, batch, w, coef, iteration);
}

inline std::size_t raft_keep(std::size_t batch_size) { return (batch_size + 3) / 4; }

/// Indices of the ceil(B/4) highest rewards; ties keep the earlier index.
inline std::vector<std::size_t> raft_selection(std::span<const double> rewards) {
  std::vector<std::size_t> idx(rewards.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rewards[a] > rewards[b]; });
  idx.resize(raft_keep(rewards.size()));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Plain CFM on the top-rewarded quarter of the batch, no reference term.
inline GradBuffer<double> raft_loss(const Net& theta, std::span<const Sample> batch, std::span<const double> rewards,
                                    std::size_t iteration = 0) {
  if (rewards.size() != batch.size()) throw ShapeError("rewards do not match the batch size");
  std::vector<Sample> kept;
  for (auto i : raft_selection(rewards)) kept.push_back(batch[i]);
  auto out = cfm_loss(theta, std::span<const Sample>(kept));
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite flow loss", iteration);
  return out;
}

// ---------------------------------------------------------------------------
// Reference pretraining

struct PretrainOptions {
  TargetSpec target;
  std::size_t num_contexts = 1;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::kTanh;
  std::size_t steps = 3000;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  double w2_threshold = 0.35;
  std::size_t eval_points = 512;
  SamplerConfig sampler;
};

/// Worst per-context W2 between `points` model samples and as many target draws.
inline double reference_w2(const Net& net, const TargetSpec& target, const SamplerConfig& sampler, std::size_t points,
                           std::uint64_t seed) {
  double worst = 0;
  for (std::size_t c = 0; c < num_contexts(net); ++c) {
    Rng rng = make_stream(seed, Stream::kEval, c);
    std::vector<Point> model, data;
    for (std::size_t i = 0; i < points; ++i) {
      const auto x0 = standard_normal(rng, target.dim);
      model.push_back(sample(net, c, sampler, std::span<const double>(x0)));
    }
    data = draw_n(target, points, rng);
    worst = std::max(worst, w2_empirical(model, data));
  }
  return worst;
}

struct PretrainResult {
  Net net;
  double w2 = 0;
};

/// Fits the reference velocity field to the target by CFM (Adam). Throws
/// PretrainError if the sampled W2 ends above the threshold.
inline PretrainResult pretrain_reference(const PretrainOptions& opt) {
  opt.target.validate();
  if (opt.num_contexts == 0) throw ValidationError("pretrain.num_contexts", "must be positive");
  if (opt.batch_size == 0) throw ValidationError("pretrain.batch_size", "must be positive");
  const std::size_t dim = opt.target.dim;
  Net net = Net::uniform_init(velocity_topology(dim, opt.num_contexts, opt.hidden), opt.activation, opt.seed);
  Rng rng = make_stream(opt.seed, Stream::kPretrain);
  std::uniform_int_distribution<std::size_t> ctx(0, opt.num_contexts - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (opt.steps > 0) {
    Adam<double> adam(net.params().size(), opt.lr);
    std::vector<Sample> batch(opt.batch_size);
    for (std::size_t step = 0; step < opt.steps; ++step) {
      for (auto& s : batch) {
        s.context = ctx(rng);
        const auto x1 = draw(opt.target, rng);
        const auto x0 = standard_normal(rng, dim);
        s.path = make_path(std::span<const double>(x0), std::span<const double>(x1), unit(rng));
      }
      adam.step(net, cfm_loss(net, std::span<const Sample>(batch)), step);
    }
  }
  PretrainResult res{net, reference_w2(net, opt.target, opt.sampler, opt.eval_points, opt.seed)};
  if (!(res.w2 < opt.w2_threshold)) throw PretrainError(res.w2, opt.w2_threshold);
  return res;
}

// ---------------------------------------------------------------------------
// Online training loop

struct FmTrainOptions {
  FmMethod method = FmMethod::kAdrpo;
  AdaptiveRegConfig reg = AdaptiveRegConfig::flow_defaults();
  RewardEnv env;
  std::size_t batch_size = 64;
  double lr = 0.05;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  SamplerConfig sampler;
  std::uint64_t seed = 0;
  std::size_t probe_count = 256;
  bool force_zero_advantage = false;  // ablation hook: every A and A_clipped set to 0
};

/// Everything one iteration draws and derives before the parameter update.
struct FmBatch {
  std::vector<std::size_t> contexts;
  std::vector<Point> x1;         // online samples from the previous-iteration policy
  std::vector<Point> reference;  // reference samples from the same prior draws
  std::vector<double> rewards;
  std::vector<RewardedSample> rewarded;
  std::vector<Sample> paths;
  std::vector<double> coefficients;  // regularization coefficient applied per sample
};

class FmTrainer {
 public:
  FmTrainer(Net reference, FmTrainOptions opt, std::optional<Net> initial_policy = std::nullopt)
      : reference_(std::move(reference)), opt_(std::move(opt)) {
    opt_.reg.validate();
    opt_.env.validate();
    if (opt_.batch_size == 0) throw ValidationError("optimizer.batch_size", "must be positive");
    if (opt_.lr < 0) throw ValidationError("optimizer.lr", "must be nonnegative");
    if (opt_.env.num_contexts() != num_contexts(reference_))
      throw ShapeError("environment context count does not match the network embedding");
    if (opt_.env.dim() != reference_.output_dim()) throw ShapeError("environment dimension does not match network");
    policy_ = initial_policy ? std::move(*initial_policy) : reference_;
    if (policy_.widths() != reference_.widths()) throw ShapeError("policy and reference topologies differ");
    if (opt_.optimizer == OptimizerKind::kAdam && opt_.lr > 0) adam_.emplace(policy_.params().size(), opt_.lr);
    build_probes();
  }

  const Net& policy() const { return policy_; }
  const Net& reference() const { return reference_; }
  std::size_t iteration() const { return iteration_; }
  const FmTrainOptions& options() const { return opt_; }
  std::span<const VelocityProbe> probes() const { return probes_; }

  /// Draws and scores the batch for iteration n = iteration() + 1 from the current policy.
  FmBatch draw_batch() const {
    const std::size_t n = iteration_ + 1;
    const std::size_t dim = reference_.output_dim();
    const std::size_t nc = opt_.env.num_contexts();
    FmBatch b;
    Rng crng = make_stream(opt_.seed, Stream::kContext, n);
    std::uniform_int_distribution<std::size_t> ctx(0, nc - 1);
    for (std::size_t i = 0; i < opt_.batch_size; ++i) b.contexts.push_back(ctx(crng));

    for (std::size_t i = 0; i < opt_.batch_size; ++i) {
      Rng g = make_stream(opt_.seed, Stream::kGeneration, n, i);
      const auto x0 = standard_normal(g, dim);
      b.x1.push_back(sample(policy_, b.contexts[i], opt_.sampler, std::span<const double>(x0)));
      b.reference.push_back(sample(reference_, b.contexts[i], opt_.sampler, std::span<const double>(x0)));
      Rng rr = make_stream(opt_.seed, Stream::kReward, n, i);
      b.rewards.push_back(reward(opt_.env, b.x1.back(), b.contexts[i], rr));
      // Interpolation uses its own prior draw, independent of the generation noise.
      Rng ir = make_stream(opt_.seed, Stream::kInterpolation, n, i);
      const double t = std::uniform_real_distribution<double>(0.0, 1.0)(ir);
      const auto x0i = standard_normal(ir, dim);
      b.paths.push_back({make_path(std::span<const double>(x0i), std::span<const double>(b.x1.back()), t),
                         b.contexts[i]});
    }

    b.rewarded = rewarded_samples(b.rewards, b.contexts, opt_.reg);
    if (opt_.force_zero_advantage)
      for (auto& s : b.rewarded) s.advantage = s.clipped = 0.0;

    for (const auto& s : b.rewarded) {
      switch (opt_.method) {
        case FmMethod::kAdrpo: b.coefficients.push_back(beta_tot(opt_.reg, s.clipped)); break;
        case FmMethod::kOrwW2:
        case FmMethod::kAdvFixedBeta: b.coefficients.push_back(opt_.reg.beta0); break;
        case FmMethod::kRaft: b.coefficients.push_back(0.0); break;
      }
    }
    return b;
  }

  /// Loss and gradient of the configured method on a drawn batch.
  GradBuffer<double> loss(const FmBatch& b) const {
    const std::size_t n = iteration_ + 1;
    std::vector<double> clipped;
    for (const auto& s : b.rewarded) clipped.push_back(s.clipped);
    switch (opt_.method) {
      case FmMethod::kAdrpo: return adrpo_fm_loss(policy_, reference_, b.paths, clipped, opt_.reg, n);
      case FmMethod::kAdvFixedBeta: return adv_fixed_beta_loss(policy_, reference_, b.paths, clipped, opt_.reg, n);
      case FmMethod::kOrwW2: return orw_w2_loss(policy_, reference_, b.paths, b.rewards, opt_.reg.beta0, n);
      case FmMethod::kRaft: return raft_loss(policy_, b.paths, b.rewards, n);
    }
    throw UsageError("unhandled method");
  }

  /// One online iteration: sample, score, one optimizer step. The trainer is
  /// left untouched if any stage throws.
  MetricsRecord step() {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = iteration_ + 1;
    const FmBatch b = draw_batch();
    const auto grad = loss(b);
    MetricsRecord rec = measure(b);
    rec.iteration = n;

    Net next = policy_;
    std::optional<Adam<double>> next_adam = adam_;
    if (opt_.lr > 0) {
      if (next_adam)
        next_adam->step(next, grad, n);
      else
        next = sgd_step(std::move(next), grad, opt_.lr, n);
    } else {
      for (auto g : grad.grad)
        if (!std::isfinite(g)) throw DivergenceError("non-finite gradient", n);
    }
    policy_ = std::move(next);
    adam_ = std::move(next_adam);
    iteration_ = n;
    rec.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

 private:
  void build_probes() {
    const std::size_t dim = reference_.output_dim();
    const std::size_t nc = opt_.env.num_contexts();
    for (std::size_t j = 0; j < opt_.probe_count; ++j) {
      Rng r = make_stream(opt_.seed, Stream::kProbe, 0, j);
      VelocityProbe p;
      p.context = std::uniform_int_distribution<std::size_t>(0, nc - 1)(r);
      p.t = std::uniform_real_distribution<double>(0.0, 1.0)(r);
      const auto x0 = standard_normal(r, dim);
      const auto x1 = sample(reference_, p.context, opt_.sampler, std::span<const double>(x0));
      p.x.resize(dim);
      for (std::size_t d = 0; d < dim; ++d) p.x[d] = (1.0 - p.t) * x0[d] + p.t * x1[d];
      probes_.push_back(std::move(p));
    }
  }

  MetricsRecord measure(const FmBatch& b) const {
    MetricsRecord rec;
    rec.method = to_string(opt_.method);
    rec.seed = opt_.seed;
    double rsum = 0;
    for (double r : b.rewards) rsum += r;
    rec.reward_mean = rsum / static_cast<double>(b.rewards.size());

    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < b.contexts.size(); ++i) groups[b.contexts[i]].push_back(i);
    double div_sum = 0, w2_sq = 0;
    std::size_t div_n = 0, w2_n = 0;
    for (const auto& [c, idx] : groups) {
      ContextMetrics cm;
      cm.context = c;
      cm.count = idx.size();
      std::vector<Point> xs, refs;
      double s = 0;
      for (auto i : idx) {
        xs.push_back(b.x1[i]);
        refs.push_back(b.reference[i]);
        s += b.rewards[i];
      }
      cm.reward_mean = s / static_cast<double>(idx.size());
      if (xs.size() >= 2) {
        cm.diversity = diversity(xs);
        div_sum += *cm.diversity;
        ++div_n;
      }
      cm.w2_to_reference = w2_empirical(xs, refs);
      w2_sq += static_cast<double>(xs.size()) * *cm.w2_to_reference * *cm.w2_to_reference;
      w2_n += xs.size();
      rec.contexts.push_back(cm);
    }
    if (div_n > 0) rec.diversity = div_sum / static_cast<double>(div_n);
    rec.w2_to_reference = std::sqrt(w2_sq / static_cast<double>(w2_n));
    rec.velocity_divergence = velocity_divergence(policy_, reference_, probes_);
    rec.beta_tot = BetaStats::of(b.coefficients);
    return rec;
  }

  Net reference_;
  Net policy_;
  FmTrainOptions opt_;
  std::optional<Adam<double>> adam_;
  std::vector<VelocityProbe> probes_;
  std::size_t iteration_ = 0;
};

}  // namespace adrpo
