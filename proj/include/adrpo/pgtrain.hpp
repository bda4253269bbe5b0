#pragma once

// Clipped group-relative policy gradient on tabular softmax policies over
// contextual bandits, with a fixed or advantage-adaptive KL coefficient.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "adrpo/advantage.hpp"
#include "adrpo/error.hpp"
#include "adrpo/metrics.hpp"
#include "adrpo/rng.hpp"

namespace adrpo {

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("softmax of an empty row");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

/// Row-major logits[context][action].
class PolicyTable {
 public:
  PolicyTable() = default;
  PolicyTable(std::size_t contexts, std::size_t actions)
      : contexts_(contexts), actions_(actions), logits_(contexts * actions, 0.0) {
    if (actions < 2) throw ShapeError("a policy needs at least two actions");
  }
  explicit PolicyTable(const std::vector<std::vector<double>>& logits)
      : PolicyTable(logits.size(), logits.empty() ? 0 : logits.front().size()) {
    for (std::size_t c = 0; c < contexts_; ++c) {
      if (logits[c].size() != actions_) throw ShapeError("ragged logit table");
      std::copy(logits[c].begin(), logits[c].end(), row(c).begin());
    }
  }

  std::size_t contexts() const { return contexts_; }
  std::size_t actions() const { return actions_; }
  std::span<double> row(std::size_t c) { return {logits_.data() + c * actions_, actions_}; }
  std::span<const double> row(std::size_t c) const { return {logits_.data() + c * actions_, actions_}; }
  std::vector<double> probs(std::size_t c) const { return softmax(row(c)); }
  std::span<const double> logits() const { return logits_; }
  std::span<double> logits() { return logits_; }

  bool operator==(const PolicyTable&) const = default;

 private:
  std::size_t contexts_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> logits_;
};

/// Rewards R[c][a] with additive N(0, noise^2) and the reference policy's logits.
struct BanditSpec {
  std::vector<std::vector<double>> rewards;
  double noise = 0.0;
  std::vector<std::vector<double>> reference_logits;

  std::size_t contexts() const { return rewards.size(); }
  std::size_t actions() const { return rewards.empty() ? 0 : rewards.front().size(); }

  std::size_t best_action(std::size_t c) const {
    const auto& r = rewards.at(c);
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }

  void validate() const {
    if (rewards.empty()) throw ValidationError("bandit.rewards", "at least one context is required");
    if (actions() < 2) throw ValidationError("bandit.rewards", "at least two actions are required");
    for (const auto& row : rewards) {
      if (row.size() != actions()) throw ValidationError("bandit.rewards", "ragged reward table");
      for (double r : row)
        if (!std::isfinite(r)) throw ValidationError("bandit.rewards", "rewards must be finite");
    }
    if (reference_logits.size() != rewards.size())
      throw ValidationError("bandit.reference_logits", "needs one row per context");
    for (const auto& row : reference_logits) {
      if (row.size() != actions()) throw ValidationError("bandit.reference_logits", "row length must equal actions");
      for (double l : row)
        if (!std::isfinite(l)) throw ValidationError("bandit.reference_logits", "logits must be finite");
    }
    if (!(noise >= 0)) throw ValidationError("bandit.noise", "must be nonnegative");
  }

  bool operator==(const BanditSpec&) const = default;
};

/// Ten actions; the reference puts 0.85 on a mediocre action (reward 0.5) and
/// 0.005 on the best one (reward 1.0). The remaining mass is spread over
/// eight poor actions.
inline BanditSpec deceptive_bandit(std::size_t contexts = 1) {
  const std::vector<double> rewards{0.5, 0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 1.0};
  std::vector<double> probs(10, (1.0 - 0.85 - 0.005) / 8.0);
  probs[0] = 0.85;
  probs[9] = 0.005;
  std::vector<double> logits;
  for (double p : probs) logits.push_back(std::log(p));
  BanditSpec spec;
  spec.noise = 0.05;
  for (std::size_t c = 0; c < contexts; ++c) {
    spec.rewards.push_back(rewards);
    spec.reference_logits.push_back(logits);
  }
  return spec;
}

inline constexpr double kGroupStdEpsilon = 1e-8;

/// (r_i - mean) / population std; all zeros when the std is <= 1e-8.
inline std::vector<double> grpo_advantage(std::span<const double> rewards) {
  if (rewards.size() < 2) throw UsageError("group advantage needs at least two samples");
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size(), 0.0);
  if (sd > kGroupStdEpsilon)
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

struct GroupRollout {
  std::size_t context = 0;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> old_probs;  // pi_old(a_i | c) at sampling time
};

struct PgLoss {
  double loss = 0;
  std::vector<double> grad;          // d loss / d logits of the rollout's context
  std::vector<double> coefficients;  // per-sample KL coefficients (empty for pg_loss)
};

namespace detail {
inline void check_rollout(std::size_t actions, const GroupRollout& r) {
  const auto g = r.actions.size();
  if (g == 0 || r.advantages.size() != g || r.old_probs.size() != g) throw ShapeError("inconsistent rollout sizes");
  for (auto a : r.actions)
    if (a >= actions) throw ShapeError("rollout action outside the policy row");
}
}  // namespace detail

/// mean_i -min(A_i ratio_i, A_i clip(ratio_i, 1-eps, 1+eps)), ratio = pi/pi_old.
inline PgLoss pg_loss(std::span<const double> logits, const GroupRollout& rollout, double eps) {
  if (!(eps > 0 && eps < 1)) throw DomainError("clip epsilon must lie in (0, 1)");
  detail::check_rollout(logits.size(), rollout);
  const auto p = softmax(logits);
  const double inv_g = 1.0 / static_cast<double>(rollout.actions.size());
  PgLoss out;
  out.grad.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < rollout.actions.size(); ++i) {
    const std::size_t a = rollout.actions[i];
    const double adv = rollout.advantages[i];
    const double ratio = p[a] / rollout.old_probs[i];
    const double unclipped = adv * ratio;
    const double clipped = adv * std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    out.loss -= std::min(unclipped, clipped) * inv_g;
    if (unclipped <= clipped) {
      // d ratio / d logit_j = ratio (1[j == a] - p_j)
      const double s = -adv * ratio * inv_g;
      for (std::size_t j = 0; j < logits.size(); ++j) out.grad[j] += s * ((j == a ? 1.0 : 0.0) - p[j]);
    }
  }
  return out;
}

/// KL(p || q) = sum_a p_a ln(p_a / q_a).
inline double kl_exact(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("distributions differ in support size");
  double kl = 0;
  for (std::size_t a = 0; a < p.size(); ++a)
    if (p[a] > 0) kl += p[a] * std::log(p[a] / q[a]);
  return std::max(0.0, kl);
}

/// How the divergence term enters the loss.
///   exact:   mean_i(coef_i) * KL(pi_theta || pi_ref) summed over all actions
///   sampled: mean_i coef_i * k3(a_i), k3 = q/p - ln(q/p) - 1 at the sampled action,
///            so each sample's coefficient acts on its own action
enum class KlMode { kExact, kSampled };

inline std::string to_string(KlMode m) { return m == KlMode::kExact ? "exact" : "sampled"; }

inline KlMode kl_mode_from_string(const std::string& s) {
  if (s == "exact") return KlMode::kExact;
  if (s == "sampled") return KlMode::kSampled;
  throw ValidationError("bandit.kl", "unknown KL mode '" + s + "'");
}

/// pg_loss plus the coefficient-weighted divergence to the reference row.
inline PgLoss regularized_pg_loss(std::span<const double> logits, std::span<const double> ref_probs,
                                  const GroupRollout& rollout, std::vector<double> coefficients, double eps,
                                  KlMode mode = KlMode::kExact) {
  if (ref_probs.size() != logits.size()) throw ShapeError("reference row length differs from policy row");
  if (coefficients.size() != rollout.actions.size()) throw ShapeError("one coefficient per sample is required");
  PgLoss out = pg_loss(logits, rollout, eps);
  const auto p = softmax(logits);
  const double inv_g = 1.0 / static_cast<double>(coefficients.size());
  if (mode == KlMode::kExact) {
    double coef = 0;
    for (double c : coefficients) coef += c;
    coef *= inv_g;
    double kl = 0;
    for (std::size_t a = 0; a < p.size(); ++a) kl += p[a] * std::log(p[a] / ref_probs[a]);
    out.loss += coef * kl;
    // d KL / d logit_j = p_j (ln(p_j / q_j) - KL)
    for (std::size_t j = 0; j < p.size(); ++j) out.grad[j] += coef * p[j] * (std::log(p[j] / ref_probs[j]) - kl);
  } else {
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
      const std::size_t a = rollout.actions[i];
      const double r = ref_probs[a] / p[a];
      out.loss += coefficients[i] * (r - std::log(r) - 1.0) * inv_g;
      // d k3 / d ln p_a = 1 - r
      const double s = coefficients[i] * (1.0 - r) * inv_g;
      for (std::size_t j = 0; j < p.size(); ++j) out.grad[j] += s * ((j == a ? 1.0 : 0.0) - p[j]);
    }
  }
  out.coefficients = std::move(coefficients);
  return out;
}

/// Advantages are clipped to [a_min, a_max] before entering the coefficient;
/// the surrogate term uses them unclipped.
inline PgLoss adrpo_grpo_loss(std::span<const double> logits, std::span<const double> ref_probs,
                              const GroupRollout& rollout, const AdaptiveRegConfig& cfg, double eps,
                              KlMode mode = KlMode::kExact) {
  std::vector<double> coef;
  for (double a : rollout.advantages) coef.push_back(beta_tot(cfg, clip_advantage(cfg, a)));
  return regularized_pg_loss(logits, ref_probs, rollout, std::move(coef), eps, mode);
}

inline PgLoss grpo_loss(std::span<const double> logits, std::span<const double> ref_probs,
                        const GroupRollout& rollout, double beta, double eps, KlMode mode = KlMode::kExact) {
  return regularized_pg_loss(logits, ref_probs, rollout, std::vector<double>(rollout.actions.size(), beta), eps,
                             mode);
}

// ---------------------------------------------------------------------------

enum class PgMethod { kAdrpoGrpo, kGrpo };

inline std::string to_string(PgMethod m) { return m == PgMethod::kAdrpoGrpo ? "adrpo-grpo" : "grpo"; }

inline PgMethod pg_method_from_string(const std::string& s) {
  if (s == "adrpo-grpo") return PgMethod::kAdrpoGrpo;
  if (s == "grpo") return PgMethod::kGrpo;
  throw ValidationError("method", "unknown policy-gradient method '" + s + "'");
}

struct BanditOptions {
  PgMethod method = PgMethod::kAdrpoGrpo;
  AdaptiveRegConfig reg = AdaptiveRegConfig::policy_defaults();
  std::size_t group_size = 8;
  double lr = 0.1;
  double clip_epsilon = 0.2;
  KlMode kl_mode = KlMode::kSampled;
  std::uint64_t seed = 0;
  bool force_zero_advantage = false;
};

class BanditTrainer {
 public:
  BanditTrainer(BanditSpec spec, BanditOptions opt, std::optional<PolicyTable> initial = std::nullopt)
      : spec_(std::move(spec)), opt_(opt), reference_(spec_.reference_logits) {
    spec_.validate();
    opt_.reg.validate();
    if (opt_.group_size < 2) throw ValidationError("optimizer.group_size", "must be at least 2");
    if (!(opt_.clip_epsilon > 0 && opt_.clip_epsilon < 1))
      throw ValidationError("optimizer.clip_epsilon", "must lie in (0, 1)");
    if (opt_.lr < 0) throw ValidationError("optimizer.lr", "must be nonnegative");
    policy_ = initial ? std::move(*initial) : reference_;
    if (policy_.contexts() != reference_.contexts() || policy_.actions() != reference_.actions())
      throw ShapeError("initial policy shape differs from the bandit");
  }

  const PolicyTable& policy() const { return policy_; }
  const PolicyTable& reference() const { return reference_; }
  std::size_t iteration() const { return iteration_; }

  GroupRollout rollout(std::size_t c) const {
    const std::size_t n = iteration_ + 1;
    Rng rng = make_stream(opt_.seed, Stream::kAction, n, c);
    const auto p = policy_.probs(c);
    std::discrete_distribution<std::size_t> pick(p.begin(), p.end());
    std::normal_distribution<double> noise(0.0, spec_.noise > 0 ? spec_.noise : 1.0);
    GroupRollout r;
    r.context = c;
    for (std::size_t i = 0; i < opt_.group_size; ++i) {
      const std::size_t a = pick(rng);
      r.actions.push_back(a);
      r.old_probs.push_back(p[a]);
      r.rewards.push_back(spec_.rewards[c][a] + (spec_.noise > 0 ? noise(rng) : 0.0));
    }
    r.advantages = grpo_advantage(r.rewards);
    if (opt_.force_zero_advantage) std::fill(r.advantages.begin(), r.advantages.end(), 0.0);
    return r;
  }

  MetricsRecord step() {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = iteration_ + 1;
    MetricsRecord rec;
    rec.iteration = n;
    rec.method = to_string(opt_.method);
    rec.seed = opt_.seed;
    std::vector<double> grad(policy_.logits().size(), 0.0), betas;
    double rsum = 0, er = 0, ent = 0, kl = 0, best = 0;
    std::size_t rn = 0;
    const double inv_c = 1.0 / static_cast<double>(spec_.contexts());
    for (std::size_t c = 0; c < spec_.contexts(); ++c) {
      const auto r = rollout(c);
      const auto p = policy_.probs(c);
      const auto q = reference_.probs(c);
      const PgLoss l = opt_.method == PgMethod::kAdrpoGrpo
                           ? adrpo_grpo_loss(policy_.row(c), q, r, opt_.reg, opt_.clip_epsilon, opt_.kl_mode)
                           : grpo_loss(policy_.row(c), q, r, opt_.reg.beta0, opt_.clip_epsilon, opt_.kl_mode);
      for (std::size_t a = 0; a < l.grad.size(); ++a) grad[c * policy_.actions() + a] += l.grad[a] * inv_c;
      betas.insert(betas.end(), l.coefficients.begin(), l.coefficients.end());

      ContextMetrics cm;
      cm.context = c;
      cm.count = r.rewards.size();
      double s = 0;
      for (double x : r.rewards) s += x;
      cm.reward_mean = s / static_cast<double>(r.rewards.size());
      cm.entropy = entropy(p);
      cm.kl = kl_exact(p, q);
      rsum += s;
      rn += r.rewards.size();
      double e = 0;
      for (std::size_t a = 0; a < p.size(); ++a) e += p[a] * spec_.rewards[c][a];
      er += e * inv_c;
      ent += *cm.entropy * inv_c;
      kl += *cm.kl * inv_c;
      best += p[spec_.best_action(c)] * inv_c;
      rec.contexts.push_back(cm);
    }
    for (double g : grad)
      if (!std::isfinite(g)) throw DivergenceError("non-finite policy gradient", n);
    rec.reward_mean = rsum / static_cast<double>(rn);
    rec.expected_reward = er;
    rec.entropy = ent;
    rec.kl = kl;
    rec.best_action_mass = best;
    rec.beta_tot = BetaStats::of(betas);

    if (opt_.lr > 0) {
      auto logits = policy_.logits();
      for (std::size_t i = 0; i < logits.size(); ++i) logits[i] -= opt_.lr * grad[i];
    }
    iteration_ = n;
    rec.wall_clock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
  }

 private:
  BanditSpec spec_;
  BanditOptions opt_;
  PolicyTable reference_;
  PolicyTable policy_;
  std::size_t iteration_ = 0;
};

inline std::vector<MetricsRecord> run_bandit(const BanditSpec& spec, const BanditOptions& opt, std::size_t budget) {
  BanditTrainer trainer(spec, opt);
  std::vector<MetricsRecord> out;
  out.reserve(budget);
  for (std::size_t i = 0; i < budget; ++i) out.push_back(trainer.step());
  return out;
}

}  // namespace adrpo
