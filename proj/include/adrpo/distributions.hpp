#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "adrpo/error.hpp"
#include "adrpo/rng.hpp"

namespace adrpo {

enum class TargetKind { kStandardNormal, kGaussian, kMixture, kRing };

inline std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::kStandardNormal: return "standard-normal";
    case TargetKind::kGaussian: return "gaussian";
    case TargetKind::kMixture: return "mixture";
    case TargetKind::kRing: return "ring";
  }
  return "?";
}

inline TargetKind target_kind_from_string(const std::string& s) {
  if (s == "standard-normal") return TargetKind::kStandardNormal;
  if (s == "gaussian") return TargetKind::kGaussian;
  if (s == "mixture") return TargetKind::kMixture;
  if (s == "ring") return TargetKind::kRing;
  throw ValidationError("pretrain.target.kind", "unknown target distribution '" + s + "'");
}

/// Synthetic data distribution for pretraining the reference flow.
///   gaussian: N(means[0], std^2 I)
///   mixture:  sum_k weights[k] N(means[k], std^2 I)
///   ring:     angle ~ U(0, 2pi), radius + N(0, std^2) around means[0]
struct TargetSpec {
  TargetKind kind = TargetKind::kStandardNormal;
  std::size_t dim = 2;
  std::vector<std::vector<double>> means;
  std::vector<double> weights;
  double std = 1.0;
  double radius = 1.0;

  void validate() const {
    if (dim == 0) throw ValidationError("pretrain.target.dim", "must be positive");
    if (kind != TargetKind::kStandardNormal) {
      if (means.empty()) throw ValidationError("pretrain.target.means", "at least one mean is required");
      for (const auto& m : means)
        if (m.size() != dim) throw ValidationError("pretrain.target.means", "dimension mismatch");
      if (!(std > 0)) throw ValidationError("pretrain.target.std", "must be positive");
    }
    if (kind == TargetKind::kRing && dim != 2) throw ValidationError("pretrain.target.dim", "ring is 2-D only");
    if (kind == TargetKind::kMixture && !weights.empty()) {
      if (weights.size() != means.size()) throw ValidationError("pretrain.target.weights", "one weight per mean");
      for (double w : weights)
        if (!(w > 0)) throw ValidationError("pretrain.target.weights", "weights must be positive");
    }
  }

  bool operator==(const TargetSpec&) const = default;
};

inline std::vector<double> draw(const TargetSpec& spec, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(spec.dim);
  switch (spec.kind) {
    case TargetKind::kStandardNormal:
      for (auto& v : x) v = normal(rng);
      break;
    case TargetKind::kGaussian:
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = spec.means[0][d] + spec.std * normal(rng);
      break;
    case TargetKind::kMixture: {
      std::size_t k = 0;
      if (spec.weights.empty())
        k = std::uniform_int_distribution<std::size_t>(0, spec.means.size() - 1)(rng);
      else
        k = std::discrete_distribution<std::size_t>(spec.weights.begin(), spec.weights.end())(rng);
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = spec.means[k][d] + spec.std * normal(rng);
      break;
    }
    case TargetKind::kRing: {
      const double a = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
      const double r = spec.radius + spec.std * normal(rng);
      x[0] = spec.means[0][0] + r * std::cos(a);
      x[1] = spec.means[0][1] + r * std::sin(a);
      break;
    }
  }
  return x;
}

inline std::vector<std::vector<double>> draw_n(const TargetSpec& spec, std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw(spec, rng));
  return out;
}

}  // namespace adrpo
