#pragma once

// Evaluation quantities and the per-iteration metrics record.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adrpo/assignment.hpp"
#include "adrpo/error.hpp"
#include "adrpo/netcore.hpp"

namespace adrpo {

using Point = std::vector<double>;

inline constexpr const char* kMetricsSchema = "adrpo-metrics/1";

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("points differ in dimension");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Mean Euclidean distance over all unordered pairs.
inline double diversity(std::span<const Point> samples) {
  if (samples.size() < 2) throw UsageError("diversity needs at least two samples");
  double s = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) s += euclidean(samples[i], samples[j]);
  const double pairs = 0.5 * static_cast<double>(samples.size()) * static_cast<double>(samples.size() - 1);
  return s / pairs;
}

/// Exact W2 between two uniform empirical measures of equal size.
inline double w2_empirical(std::span<const Point> a, std::span<const Point> b) {
  if (a.size() != b.size()) throw UsageError("w2_empirical needs equal-size point sets");
  if (a.empty()) throw UsageError("w2_empirical needs nonempty point sets");
  if (a.size() > 1024) throw UsageError("w2_empirical supports at most 1024 points");
  const std::size_t n = a.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double d = euclidean(a[i], b[j]);
      cost[i * n + j] = d * d;
    }
  const auto sol = solve_assignment(cost, n);
  return std::sqrt(std::max(0.0, sol.cost / static_cast<double>(n)));
}

struct VelocityProbe {
  Point x;
  double t = 0;
  std::size_t context = 0;
};

/// Mean squared velocity difference between two fields over fixed probes.
inline double velocity_divergence(const Mlp<double>& a, const Mlp<double>& b, std::span<const VelocityProbe> probes) {
  if (probes.empty()) return 0.0;
  std::vector<double> va(a.output_dim()), vb(b.output_dim());
  double s = 0;
  for (const auto& p : probes) {
    velocity(a, std::span<const double>(p.x), p.t, p.context, std::span<double>(va));
    velocity(b, std::span<const double>(p.x), p.t, p.context, std::span<double>(vb));
    for (std::size_t d = 0; d < va.size(); ++d) s += (va[d] - vb[d]) * (va[d] - vb[d]);
  }
  return s / static_cast<double>(probes.size());
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
inline double entropy(std::span<const double> p) {
  double h = 0;
  for (double q : p)
    if (q > 0) h -= q * std::log(q);
  return h;
}

// ---------------------------------------------------------------------------

struct BetaStats {
  double min = 0, mean = 0, max = 0;

  static BetaStats of(std::span<const double> betas) {
    BetaStats s;
    if (betas.empty()) return s;
    s.min = s.max = betas[0];
    double sum = 0;
    for (double b : betas) {
      s.min = std::min(s.min, b);
      s.max = std::max(s.max, b);
      sum += b;
    }
    // Rounding in the sum can push the mean of equal values one ulp outside [min, max].
    s.mean = std::clamp(sum / static_cast<double>(betas.size()), s.min, s.max);
    return s;
  }
};

struct ContextMetrics {
  std::size_t context = 0;
  std::size_t count = 0;
  double reward_mean = 0;
  std::optional<double> diversity;
  std::optional<double> w2_to_reference;
  std::optional<double> entropy;
  std::optional<double> kl;

  bool operator==(const ContextMetrics&) const = default;
};

/// One training iteration's measurements. Flow runs fill the diversity/W2/velocity
/// fields, bandit runs the entropy/KL/expected-reward fields.
struct MetricsRecord {
  std::size_t iteration = 0;
  std::string method;
  std::uint64_t seed = 0;
  double reward_mean = 0;
  std::optional<double> diversity;
  std::optional<double> w2_to_reference;
  std::optional<double> velocity_divergence;
  std::optional<double> entropy;
  std::optional<double> kl;
  std::optional<double> expected_reward;
  std::optional<double> best_action_mass;
  BetaStats beta_tot;
  std::vector<ContextMetrics> contexts;
  double wall_clock_ms = 0;  // kept out of the JSONL stream, which must be reproducible

  bool operator==(const MetricsRecord& o) const {
    return iteration == o.iteration && method == o.method && seed == o.seed && reward_mean == o.reward_mean &&
           diversity == o.diversity && w2_to_reference == o.w2_to_reference &&
           velocity_divergence == o.velocity_divergence && entropy == o.entropy && kl == o.kl &&
           expected_reward == o.expected_reward && best_action_mass == o.best_action_mass &&
           beta_tot.min == o.beta_tot.min && beta_tot.mean == o.beta_tot.mean && beta_tot.max == o.beta_tot.max &&
           contexts == o.contexts;
  }
};

namespace detail {

inline void put_finite(nlohmann::ordered_json& j, const char* key, double v) {
  if (!std::isfinite(v)) throw Error(std::string("metrics field '") + key + "' is not finite");
  j[key] = v;
}

inline void put_finite(nlohmann::ordered_json& j, const char* key, const std::optional<double>& v) {
  if (v) put_finite(j, key, *v);
}

inline std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) return it->get<double>();
  return std::nullopt;
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = kMetricsSchema;
  j["iteration"] = r.iteration;
  j["method"] = r.method;
  j["seed"] = r.seed;
  detail::put_finite(j, "reward_mean", r.reward_mean);
  detail::put_finite(j, "diversity", r.diversity);
  detail::put_finite(j, "w2_to_reference", r.w2_to_reference);
  detail::put_finite(j, "velocity_divergence", r.velocity_divergence);
  detail::put_finite(j, "entropy", r.entropy);
  detail::put_finite(j, "kl", r.kl);
  detail::put_finite(j, "expected_reward", r.expected_reward);
  detail::put_finite(j, "best_action_mass", r.best_action_mass);
  nlohmann::ordered_json b;
  detail::put_finite(b, "min", r.beta_tot.min);
  detail::put_finite(b, "mean", r.beta_tot.mean);
  detail::put_finite(b, "max", r.beta_tot.max);
  j["beta_tot"] = b;
  auto ctx = nlohmann::ordered_json::array();
  for (const auto& c : r.contexts) {
    nlohmann::ordered_json cj;
    cj["context"] = c.context;
    cj["count"] = c.count;
    detail::put_finite(cj, "reward_mean", c.reward_mean);
    detail::put_finite(cj, "diversity", c.diversity);
    detail::put_finite(cj, "w2_to_reference", c.w2_to_reference);
    detail::put_finite(cj, "entropy", c.entropy);
    detail::put_finite(cj, "kl", c.kl);
    ctx.push_back(std::move(cj));
  }
  j["contexts"] = std::move(ctx);
  return j;
}

inline std::string to_jsonl_line(const MetricsRecord& r) { return to_json(r).dump() + "\n"; }

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string{}) != kMetricsSchema)
    throw IoError("metrics record does not carry schema " + std::string(kMetricsSchema));
  MetricsRecord r;
  r.iteration = j.at("iteration").get<std::size_t>();
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.reward_mean = j.at("reward_mean").get<double>();
  r.diversity = detail::get_opt(j, "diversity");
  r.w2_to_reference = detail::get_opt(j, "w2_to_reference");
  r.velocity_divergence = detail::get_opt(j, "velocity_divergence");
  r.entropy = detail::get_opt(j, "entropy");
  r.kl = detail::get_opt(j, "kl");
  r.expected_reward = detail::get_opt(j, "expected_reward");
  r.best_action_mass = detail::get_opt(j, "best_action_mass");
  const auto& b = j.at("beta_tot");
  r.beta_tot = {b.at("min").get<double>(), b.at("mean").get<double>(), b.at("max").get<double>()};
  for (const auto& cj : j.at("contexts")) {
    ContextMetrics c;
    c.context = cj.at("context").get<std::size_t>();
    c.count = cj.at("count").get<std::size_t>();
    c.reward_mean = cj.at("reward_mean").get<double>();
    c.diversity = detail::get_opt(cj, "diversity");
    c.w2_to_reference = detail::get_opt(cj, "w2_to_reference");
    c.entropy = detail::get_opt(cj, "entropy");
    c.kl = detail::get_opt(cj, "kl");
    r.contexts.push_back(c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Pareto trajectories.

enum class TradeoffAxis { kDiversity, kDivergence, kEntropy };

inline std::string to_string(TradeoffAxis a) {
  switch (a) {
    case TradeoffAxis::kDiversity: return "diversity";
    case TradeoffAxis::kDivergence: return "w2_to_reference";
    case TradeoffAxis::kEntropy: return "entropy";
  }
  return "?";
}

struct TrajectoryPoint {
  std::size_t iteration = 0;
  double reward = 0;
  double secondary = 0;
};

struct Trajectory {
  TradeoffAxis axis = TradeoffAxis::kDiversity;
  std::vector<TrajectoryPoint> points;
  const TrajectoryPoint& final_point() const { return points.back(); }
};

enum class Dominance { kFirst, kSecond, kTied, kIncomparable };

inline std::string to_string(Dominance d) {
  switch (d) {
    case Dominance::kFirst: return "first-dominates";
    case Dominance::kSecond: return "second-dominates";
    case Dominance::kTied: return "tied";
    case Dominance::kIncomparable: return "incomparable";
  }
  return "?";
}

/// Reward for bandit records is the exact expected reward when present.
inline double trajectory_reward(const MetricsRecord& r) {
  return r.expected_reward ? *r.expected_reward : r.reward_mean;
}

inline Trajectory pareto_trajectory(std::span<const MetricsRecord> records, TradeoffAxis axis) {
  if (records.empty()) throw UsageError("pareto_trajectory needs at least one record");
  Trajectory tr;
  tr.axis = axis;
  for (const auto& r : records) {
    std::optional<double> s;
    switch (axis) {
      case TradeoffAxis::kDiversity: s = r.diversity; break;
      case TradeoffAxis::kDivergence: s = r.w2_to_reference; break;
      case TradeoffAxis::kEntropy: s = r.entropy; break;
    }
    if (!s) throw UsageError("record at iteration " + std::to_string(r.iteration) + " lacks " + to_string(axis));
    tr.points.push_back({r.iteration, trajectory_reward(r), *s});
  }
  return tr;
}

/// Compares final points. Higher reward is better; on the secondary axis
/// higher is better except for divergence.
inline Dominance dominance(const Trajectory& x, const Trajectory& y) {
  if (x.points.empty() || y.points.empty()) throw UsageError("dominance needs nonempty trajectories");
  if (x.axis != y.axis) throw UsageError("trajectories use different trade-off axes");
  const auto& a = x.final_point();
  const auto& b = y.final_point();
  const double sa = x.axis == TradeoffAxis::kDivergence ? -a.secondary : a.secondary;
  const double sb = x.axis == TradeoffAxis::kDivergence ? -b.secondary : b.secondary;
  if (a.reward == b.reward && sa == sb) return Dominance::kTied;
  if (a.reward >= b.reward && sa >= sb) return Dominance::kFirst;
  if (b.reward >= a.reward && sb >= sa) return Dominance::kSecond;
  return Dominance::kIncomparable;
}

}  // namespace adrpo
