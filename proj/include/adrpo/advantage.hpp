#pragma once

// Rewards, per-context batch-mean baselines, clipped advantages and the
// adaptive regularization coefficient beta_tot = beta0 - A_clipped.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adrpo/error.hpp"
#include "adrpo/rng.hpp"

namespace adrpo {

struct AdaptiveRegConfig {
  double beta0 = 1.0;
  double a_min = -1.0;
  double a_max = 1.0;

  /// Flow-matching defaults.
  static AdaptiveRegConfig flow_defaults() { return {1.0, -1.0, 1.0}; }
  /// Policy-gradient (GRPO) defaults.
  static AdaptiveRegConfig policy_defaults() { return {0.04, -0.04, 0.04}; }

  void validate() const {
    if (!(beta0 >= 0.0) || !std::isfinite(beta0)) throw ValidationError("beta0", "must be a finite nonnegative number");
    if (!std::isfinite(a_min) || !std::isfinite(a_max)) throw ValidationError("a_min", "clip bounds must be finite");
    if (!(a_min < a_max)) throw ValidationError("a_min", "must be strictly less than a_max");
    if (a_min > 0.0) throw ValidationError("a_min", "must be <= 0");
    if (a_max < 0.0) throw ValidationError("a_max", "must be >= 0");
  }

  double beta_lower() const { return beta0 - a_max; }
  double beta_upper() const { return beta0 - a_min; }

  bool operator==(const AdaptiveRegConfig&) const = default;
};

inline double clip_advantage(const AdaptiveRegConfig& cfg, double a) { return std::clamp(a, cfg.a_min, cfg.a_max); }

/// beta0 - a_clipped; the argument must already lie in the clip range.
inline double beta_tot(const AdaptiveRegConfig& cfg, double a_clipped) {
  if (!(a_clipped >= cfg.a_min && a_clipped <= cfg.a_max))
    throw ContractError("advantage " + std::to_string(a_clipped) + " is outside the clip range [" +
                        std::to_string(cfg.a_min) + ", " + std::to_string(cfg.a_max) + "]");
  return cfg.beta0 - a_clipped;
}

struct RewardedSample {
  std::size_t context = 0;
  double reward = 0;
  double baseline = 0;
  double advantage = 0;
  double clipped = 0;
};

/// V(c): arithmetic mean of the rewards observed for each context.
inline std::map<std::size_t, double> baseline(std::span<const double> rewards, std::span<const std::size_t> contexts) {
  if (rewards.size() != contexts.size()) throw ShapeError("rewards and contexts differ in length");
  if (rewards.empty()) throw UsageError("baseline needs at least one reward");
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    auto& [sum, n] = acc[contexts[i]];
    sum += rewards[i];
    ++n;
  }
  std::map<std::size_t, double> v;
  for (const auto& [c, sn] : acc) v[c] = sn.first / static_cast<double>(sn.second);
  return v;
}

/// Baseline for rewards that all share one context.
inline double baseline(std::span<const double> rewards) {
  if (rewards.empty()) throw UsageError("baseline of an empty group");
  double s = 0;
  for (double r : rewards) s += r;
  return s / static_cast<double>(rewards.size());
}

inline std::vector<RewardedSample> advantages(std::span<const double> rewards, std::span<const std::size_t> contexts,
                                              const std::map<std::size_t, double>& values,
                                              const AdaptiveRegConfig& cfg) {
  if (rewards.size() != contexts.size()) throw ShapeError("rewards and contexts differ in length");
  std::vector<RewardedSample> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    auto it = values.find(contexts[i]);
    if (it == values.end()) throw UsageError("no baseline for context " + std::to_string(contexts[i]));
    auto& s = out[i];
    s.context = contexts[i];
    s.reward = rewards[i];
    s.baseline = it->second;
    s.advantage = s.reward - s.baseline;
    s.clipped = clip_advantage(cfg, s.advantage);
  }
  return out;
}

/// Baseline, advantage and clipping in one call.
inline std::vector<RewardedSample> rewarded_samples(std::span<const double> rewards,
                                                    std::span<const std::size_t> contexts,
                                                    const AdaptiveRegConfig& cfg) {
  return advantages(rewards, contexts, baseline(rewards, contexts), cfg);
}

// ---------------------------------------------------------------------------
// Synthetic reward environments on points.

enum class RewardKind { kTargetPoint, kRegion, kTwoPeaks };

inline std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::kTargetPoint: return "target-point";
    case RewardKind::kRegion: return "region";
    case RewardKind::kTwoPeaks: return "two-peaks";
  }
  return "?";
}

inline RewardKind reward_kind_from_string(const std::string& s) {
  if (s == "target-point") return RewardKind::kTargetPoint;
  if (s == "region") return RewardKind::kRegion;
  if (s == "two-peaks") return RewardKind::kTwoPeaks;
  throw ValidationError("env.kind", "unknown reward environment '" + s + "'");
}

/// One center per context.
///   target-point: R = -||x - center||^2
///   region:       R = 1 if ||x - center|| <= radius else 0
///   two-peaks:    R = max(near_height * g(x - center), far_height * g(x - far_center)),
///                 g(d) = exp(-||d||^2 / (2 width^2))
/// Optional additive Gaussian noise with standard deviation `noise`.
struct RewardEnv {
  RewardKind kind = RewardKind::kTargetPoint;
  std::vector<std::vector<double>> centers;
  double radius = 1.0;
  std::vector<std::vector<double>> far_centers;
  double near_height = 0.5;
  double far_height = 1.0;
  double width = 0.5;
  double noise = 0.0;

  std::size_t num_contexts() const { return centers.size(); }
  std::size_t dim() const { return centers.empty() ? 0 : centers.front().size(); }

  void validate() const {
    if (centers.empty()) throw ValidationError("env.centers", "at least one context center is required");
    for (const auto& c : centers)
      if (c.size() != dim() || c.empty()) throw ValidationError("env.centers", "centers must share one dimension");
    if (kind == RewardKind::kRegion && !(radius > 0)) throw ValidationError("env.radius", "must be positive");
    if (kind == RewardKind::kTwoPeaks) {
      if (far_centers.size() != centers.size())
        throw ValidationError("env.far_centers", "needs one far peak per context");
      for (const auto& c : far_centers)
        if (c.size() != dim()) throw ValidationError("env.far_centers", "dimension mismatch");
      if (!(width > 0)) throw ValidationError("env.width", "must be positive");
    }
    if (!(noise >= 0)) throw ValidationError("env.noise", "must be nonnegative");
  }

  bool operator==(const RewardEnv&) const = default;
};

namespace detail {
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}
}  // namespace detail

/// Noise-free reward.
inline double reward(const RewardEnv& env, std::span<const double> x, std::size_t context) {
  if (context >= env.centers.size()) throw UsageError("unknown context " + std::to_string(context));
  const auto& c = env.centers[context];
  if (x.size() != c.size()) throw ShapeError("sample dimension does not match environment");
  switch (env.kind) {
    case RewardKind::kTargetPoint: return -detail::squared_distance(x, c);
    case RewardKind::kRegion: return detail::squared_distance(x, c) <= env.radius * env.radius ? 1.0 : 0.0;
    case RewardKind::kTwoPeaks: {
      const double s2 = 2.0 * env.width * env.width;
      const double near = env.near_height * std::exp(-detail::squared_distance(x, c) / s2);
      const double far = env.far_height * std::exp(-detail::squared_distance(x, env.far_centers[context]) / s2);
      return std::max(near, far);
    }
  }
  return 0;
}

/// Reward plus the environment's seeded Gaussian noise term.
inline double reward(const RewardEnv& env, std::span<const double> x, std::size_t context, Rng& rng) {
  double r = reward(env, x, context);
  if (env.noise > 0) r += std::normal_distribution<double>(0.0, env.noise)(rng);
  return r;
}

}  // namespace adrpo
