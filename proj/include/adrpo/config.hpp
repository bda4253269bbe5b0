#pragma once

// Experiment configuration: TOML in, validated ExperimentConfig out, and back.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "adrpo/advantage.hpp"
#include "adrpo/distributions.hpp"
#include "adrpo/error.hpp"
#include "adrpo/flowmatch.hpp"
#include "adrpo/netcore.hpp"
#include "adrpo/pgtrain.hpp"

namespace adrpo {

enum class ExperimentKind { kFm, kPg };

inline std::string to_string(ExperimentKind k) { return k == ExperimentKind::kFm ? "fm" : "pg"; }

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
  if (s == "fm") return ExperimentKind::kFm;
  if (s == "pg") return ExperimentKind::kPg;
  throw ValidationError("kind", "expected \"fm\" or \"pg\", got '" + s + "'");
}

struct PretrainConfig {
  TargetSpec target;
  std::size_t steps = 3000;
  std::size_t batch_size = 256;
  double lr = 2e-3;
  std::uint64_t seed = 0;
  double w2_threshold = 0.35;
  std::size_t eval_points = 512;
  std::string checkpoint;  // reuse this reference instead of pretraining when set

  bool operator==(const PretrainConfig&) const = default;
};

/// "deceptive" builds the standard trap bandit; "custom" reads the tables.
struct BanditConfig {
  std::string preset = "deceptive";
  std::size_t contexts = 1;
  std::vector<std::vector<double>> rewards;
  std::vector<std::vector<double>> reference_logits;
  double noise = 0.05;

  BanditSpec resolve() const {
    if (preset == "deceptive") {
      auto spec = deceptive_bandit(contexts);
      spec.noise = noise;
      return spec;
    }
    BanditSpec spec{rewards, noise, reference_logits};
    spec.validate();
    return spec;
  }

  bool operator==(const BanditConfig&) const = default;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kFm;
  std::string method;
  std::vector<std::uint64_t> seeds{0};
  std::size_t budget = 400;
  std::string output;  // empty: resolved at run time from ADRPO_OUT
  std::size_t checkpoint_every = 0;

  AdaptiveRegConfig reg;
  double clip_epsilon = 0.2;
  KlMode kl_mode = KlMode::kSampled;

  std::string optimizer = "sgd";
  double lr = 0.05;
  std::size_t batch_size = 64;
  std::size_t group_size = 8;

  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::kTanh;
  SamplerConfig sampler;
  std::size_t probe_count = 256;

  RewardEnv env;
  PretrainConfig pretrain;
  BanditConfig bandit;

  bool operator==(const ExperimentConfig& o) const {
    return kind == o.kind && method == o.method && seeds == o.seeds && budget == o.budget && output == o.output &&
           checkpoint_every == o.checkpoint_every && reg == o.reg && clip_epsilon == o.clip_epsilon &&
           kl_mode == o.kl_mode && optimizer == o.optimizer && lr == o.lr && batch_size == o.batch_size &&
           group_size == o.group_size && hidden == o.hidden && activation == o.activation &&
           sampler.num_steps == o.sampler.num_steps && probe_count == o.probe_count && env == o.env &&
           pretrain == o.pretrain && bandit == o.bandit;
  }
};

/// Defaults that depend on the experiment kind.
inline ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  if (kind == ExperimentKind::kFm) {
    c.method = "adrpo";
    c.reg = AdaptiveRegConfig::flow_defaults();
    c.lr = 0.05;
  } else {
    c.method = "adrpo-grpo";
    c.reg = AdaptiveRegConfig::policy_defaults();
    c.lr = 0.1;
  }
  return c;
}

namespace detail {

// Walks one TOML table, remembering which keys were consumed so leftovers can
// be reported as unknown.
class Section {
 public:
  Section(const toml::table* t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

  bool present() const { return t_ != nullptr; }
  std::string name(std::string_view key) const { return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key); }

  const toml::node* node(std::string_view key) {
    if (!t_) return nullptr;
    seen_.insert(std::string(key));
    return t_->get(key);
  }

  Section sub(std::string_view key) {
    const auto* n = node(key);
    if (n && !n->is_table()) throw ValidationError(name(key), "expected a table");
    return Section(n ? n->as_table() : nullptr, name(key));
  }

  void read(std::string_view key, double& out) {
    if (const auto* n = node(key)) out = as_double(*n, name(key));
  }
  void read(std::string_view key, std::size_t& out) {
    if (const auto* n = node(key)) out = static_cast<std::size_t>(as_uint(*n, name(key)));
  }
  void read(std::string_view key, std::string& out) {
    if (const auto* n = node(key)) out = as_string(*n, name(key));
  }
  void read(std::string_view key, std::vector<double>& out) {
    if (const auto* n = node(key)) out = as_doubles(*n, name(key));
  }
  void read(std::string_view key, std::vector<std::size_t>& out) {
    if (const auto* n = node(key)) {
      const auto* a = array(*n, name(key));
      out.clear();
      for (std::size_t i = 0; i < a->size(); ++i) out.push_back(as_uint(*a->get(i), name(key)));
    }
  }
  void read(std::string_view key, std::vector<std::vector<double>>& out) {
    if (const auto* n = node(key)) {
      const auto* a = array(*n, name(key));
      out.clear();
      for (std::size_t i = 0; i < a->size(); ++i) out.push_back(as_doubles(*a->get(i), name(key)));
    }
  }

  void reject_unknown() const {
    if (!t_) return;
    for (const auto& [k, v] : *t_)
      if (!seen_.count(std::string(k.str()))) throw ValidationError(name(k.str()), "unknown key");
  }

  static double as_double(const toml::node& n, const std::string& field) {
    if (auto v = n.as_floating_point()) return v->get();
    if (auto v = n.as_integer()) return static_cast<double>(v->get());
    throw ValidationError(field, "expected a number");
  }
  static std::uint64_t as_uint(const toml::node& n, const std::string& field) {
    auto v = n.as_integer();
    if (!v) throw ValidationError(field, "expected an integer");
    if (v->get() < 0) throw ValidationError(field, "must be nonnegative");
    return static_cast<std::uint64_t>(v->get());
  }
  static std::string as_string(const toml::node& n, const std::string& field) {
    auto v = n.as_string();
    if (!v) throw ValidationError(field, "expected a string");
    return v->get();
  }
  static const toml::array* array(const toml::node& n, const std::string& field) {
    const auto* a = n.as_array();
    if (!a) throw ValidationError(field, "expected an array");
    return a;
  }
  static std::vector<double> as_doubles(const toml::node& n, const std::string& field) {
    const auto* a = array(n, field);
    std::vector<double> out;
    for (std::size_t i = 0; i < a->size(); ++i) out.push_back(as_double(*a->get(i), field));
    return out;
  }

 private:
  const toml::table* t_;
  std::string prefix_;
  std::set<std::string> seen_;
};

[[noreturn]] inline void rethrow_qualified(const ValidationError& e, const std::string& prefix) {
  const std::string what = e.what();
  throw ValidationError(prefix + e.field(), what.substr(e.field().size() + 2));
}

inline bool is_fm_method(const std::string& m) {
  return m == "adrpo" || m == "orw-w2" || m == "raft" || m == "adv-fixed-beta";
}
inline bool is_pg_method(const std::string& m) { return m == "adrpo-grpo" || m == "grpo"; }

}  // namespace detail

/// Checks cross-field invariants. parse_config calls this; callers that edit
/// a config afterwards (CLI overrides) call it again.
inline void validate(const ExperimentConfig& c) {
  const bool fm = c.kind == ExperimentKind::kFm;
  if (fm ? !detail::is_fm_method(c.method) : !detail::is_pg_method(c.method))
    throw ValidationError("method", "'" + c.method + "' is not a " + to_string(c.kind) + " method");
  if (c.seeds.empty()) throw ValidationError("seeds", "at least one seed is required");
  if (c.budget < 1) throw ValidationError("budget", "must be at least 1");
  try {
    c.reg.validate();
  } catch (const ValidationError& e) {
    detail::rethrow_qualified(e, "regularization.");
  }
  if (!(c.clip_epsilon > 0 && c.clip_epsilon < 1))
    throw ValidationError("regularization.clip_epsilon", "must lie in (0, 1)");
  if (c.optimizer != "sgd" && c.optimizer != "adam")
    throw ValidationError("optimizer.kind", "expected \"sgd\" or \"adam\"");
  if (!(c.lr >= 0) || !std::isfinite(c.lr)) throw ValidationError("optimizer.lr", "must be finite and nonnegative");
  if (c.batch_size == 0) throw ValidationError("optimizer.batch_size", "must be positive");
  if (c.group_size < 2) throw ValidationError("optimizer.group_size", "must be at least 2");
  for (auto h : c.hidden)
    if (h == 0) throw ValidationError("net.hidden", "layer widths must be positive");
  if (c.sampler.num_steps == 0) throw ValidationError("sampler.steps", "must be positive");
  if (fm) {
    c.env.validate();
    c.pretrain.target.validate();
    if (c.pretrain.target.dim != c.env.dim())
      throw ValidationError("pretrain.target.dim", "must equal the environment dimension");
    if (c.pretrain.batch_size == 0) throw ValidationError("pretrain.batch_size", "must be positive");
    if (!(c.pretrain.lr > 0)) throw ValidationError("pretrain.lr", "must be positive");
    if (!(c.pretrain.w2_threshold > 0)) throw ValidationError("pretrain.w2_threshold", "must be positive");
    if (c.pretrain.eval_points == 0) throw ValidationError("pretrain.eval_points", "must be positive");
  } else {
    if (c.bandit.preset != "deceptive" && c.bandit.preset != "custom")
      throw ValidationError("bandit.preset", "expected \"deceptive\" or \"custom\"");
    if (c.bandit.preset == "deceptive" && c.bandit.contexts == 0)
      throw ValidationError("bandit.contexts", "must be positive");
    c.bandit.resolve().validate();
  }
}

/// Parses and validates a TOML document. Every default is materialized.
inline ExperimentConfig parse_config(std::string_view text) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ParseError(std::string(e.description()), e.source().begin.line);
  }
  detail::Section top(&root, "");
  std::string kind_s;
  top.read("kind", kind_s);
  if (kind_s.empty()) throw ValidationError("kind", "is required");
  ExperimentConfig c = default_config(experiment_kind_from_string(kind_s));
  const bool fm = c.kind == ExperimentKind::kFm;

  top.read("method", c.method);
  if (const auto* n = top.node("seeds")) {
    const auto* a = detail::Section::array(*n, "seeds");
    c.seeds.clear();
    for (std::size_t i = 0; i < a->size(); ++i) c.seeds.push_back(detail::Section::as_uint(*a->get(i), "seeds"));
  }
  top.read("budget", c.budget);
  top.read("output", c.output);
  top.read("checkpoint_every", c.checkpoint_every);

  auto reg = top.sub("regularization");
  reg.read("beta0", c.reg.beta0);
  reg.read("a_min", c.reg.a_min);
  reg.read("a_max", c.reg.a_max);
  reg.read("clip_epsilon", c.clip_epsilon);
  std::string kl;
  reg.read("kl_mode", kl);
  if (!kl.empty()) {
    if (kl != "exact" && kl != "sampled") throw ValidationError("regularization.kl_mode", "expected \"exact\" or \"sampled\"");
    c.kl_mode = kl_mode_from_string(kl);
  }
  reg.reject_unknown();

  auto opt = top.sub("optimizer");
  opt.read("kind", c.optimizer);
  opt.read("lr", c.lr);
  opt.read("batch_size", c.batch_size);
  opt.read("group_size", c.group_size);
  opt.reject_unknown();

  auto net = top.sub("net");
  net.read("hidden", c.hidden);
  std::string act;
  net.read("activation", act);
  if (!act.empty()) {
    if (act != "tanh" && act != "softplus") throw ValidationError("net.activation", "expected \"tanh\" or \"softplus\"");
    c.activation = activation_from_string(act);
  }
  net.reject_unknown();

  auto smp = top.sub("sampler");
  smp.read("steps", c.sampler.num_steps);
  smp.read("probes", c.probe_count);
  smp.reject_unknown();

  auto env = top.sub("env");
  auto pre = top.sub("pretrain");
  auto ban = top.sub("bandit");
  if (fm) {
    if (!env.present()) throw ValidationError("env", "is required for fm experiments");
    if (ban.present()) throw ValidationError("bandit", "only valid for pg experiments");
    std::string ek;
    env.read("kind", ek);
    if (ek.empty()) throw ValidationError("env.kind", "is required");
    try {
      c.env.kind = reward_kind_from_string(ek);
    } catch (const Error&) {
      throw ValidationError("env.kind", "unknown reward '" + ek + "'");
    }
    env.read("centers", c.env.centers);
    env.read("radius", c.env.radius);
    env.read("far_centers", c.env.far_centers);
    env.read("near_height", c.env.near_height);
    env.read("far_height", c.env.far_height);
    env.read("width", c.env.width);
    env.read("noise", c.env.noise);
    env.reject_unknown();

    // The reference defaults to a standard normal in the environment's space.
    c.pretrain.target.dim = c.env.dim() == 0 ? 2 : c.env.dim();
    pre.read("steps", c.pretrain.steps);
    pre.read("batch_size", c.pretrain.batch_size);
    pre.read("lr", c.pretrain.lr);
    pre.read("seed", c.pretrain.seed);
    pre.read("w2_threshold", c.pretrain.w2_threshold);
    pre.read("eval_points", c.pretrain.eval_points);
    pre.read("checkpoint", c.pretrain.checkpoint);
    auto tgt = pre.sub("target");
    std::string tk;
    tgt.read("kind", tk);
    if (!tk.empty()) c.pretrain.target.kind = target_kind_from_string(tk);
    tgt.read("dim", c.pretrain.target.dim);
    tgt.read("means", c.pretrain.target.means);
    tgt.read("weights", c.pretrain.target.weights);
    tgt.read("std", c.pretrain.target.std);
    tgt.read("radius", c.pretrain.target.radius);
    tgt.reject_unknown();
    pre.reject_unknown();
  } else {
    if (env.present()) throw ValidationError("env", "only valid for fm experiments");
    if (pre.present()) throw ValidationError("pretrain", "only valid for fm experiments");
    ban.read("preset", c.bandit.preset);
    ban.read("contexts", c.bandit.contexts);
    ban.read("rewards", c.bandit.rewards);
    ban.read("reference_logits", c.bandit.reference_logits);
    ban.read("noise", c.bandit.noise);
    ban.reject_unknown();
  }
  top.reject_unknown();
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace detail {

inline toml::array to_array(const std::vector<double>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}
inline toml::array to_array(const std::vector<std::vector<double>>& v) {
  toml::array a;
  for (const auto& row : v) a.push_back(to_array(row));
  return a;
}

}  // namespace detail

/// Fully resolved TOML: every field is written, so the text alone reproduces the run.
inline std::string serialize_config(const ExperimentConfig& c) {
  using detail::to_array;
  toml::table root;
  root.insert("kind", to_string(c.kind));
  root.insert("method", c.method);
  toml::array seeds;
  for (auto s : c.seeds) seeds.push_back(static_cast<std::int64_t>(s));
  root.insert("seeds", seeds);
  root.insert("budget", static_cast<std::int64_t>(c.budget));
  root.insert("output", c.output);
  root.insert("checkpoint_every", static_cast<std::int64_t>(c.checkpoint_every));

  toml::table reg;
  reg.insert("beta0", c.reg.beta0);
  reg.insert("a_min", c.reg.a_min);
  reg.insert("a_max", c.reg.a_max);
  reg.insert("clip_epsilon", c.clip_epsilon);
  reg.insert("kl_mode", to_string(c.kl_mode));
  root.insert("regularization", reg);

  toml::table opt;
  opt.insert("kind", c.optimizer);
  opt.insert("lr", c.lr);
  opt.insert("batch_size", static_cast<std::int64_t>(c.batch_size));
  opt.insert("group_size", static_cast<std::int64_t>(c.group_size));
  root.insert("optimizer", opt);

  toml::table net;
  toml::array hidden;
  for (auto h : c.hidden) hidden.push_back(static_cast<std::int64_t>(h));
  net.insert("hidden", hidden);
  net.insert("activation", to_string(c.activation));
  root.insert("net", net);

  toml::table smp;
  smp.insert("steps", static_cast<std::int64_t>(c.sampler.num_steps));
  smp.insert("probes", static_cast<std::int64_t>(c.probe_count));
  root.insert("sampler", smp);

  if (c.kind == ExperimentKind::kFm) {
    toml::table env;
    env.insert("kind", to_string(c.env.kind));
    env.insert("centers", to_array(c.env.centers));
    env.insert("radius", c.env.radius);
    env.insert("far_centers", to_array(c.env.far_centers));
    env.insert("near_height", c.env.near_height);
    env.insert("far_height", c.env.far_height);
    env.insert("width", c.env.width);
    env.insert("noise", c.env.noise);
    root.insert("env", env);

    toml::table pre;
    pre.insert("steps", static_cast<std::int64_t>(c.pretrain.steps));
    pre.insert("batch_size", static_cast<std::int64_t>(c.pretrain.batch_size));
    pre.insert("lr", c.pretrain.lr);
    pre.insert("seed", static_cast<std::int64_t>(c.pretrain.seed));
    pre.insert("w2_threshold", c.pretrain.w2_threshold);
    pre.insert("eval_points", static_cast<std::int64_t>(c.pretrain.eval_points));
    pre.insert("checkpoint", c.pretrain.checkpoint);
    toml::table tgt;
    tgt.insert("kind", to_string(c.pretrain.target.kind));
    tgt.insert("dim", static_cast<std::int64_t>(c.pretrain.target.dim));
    tgt.insert("means", to_array(c.pretrain.target.means));
    tgt.insert("weights", to_array(c.pretrain.target.weights));
    tgt.insert("std", c.pretrain.target.std);
    tgt.insert("radius", c.pretrain.target.radius);
    pre.insert("target", tgt);
    root.insert("pretrain", pre);
  } else {
    toml::table ban;
    ban.insert("preset", c.bandit.preset);
    ban.insert("contexts", static_cast<std::int64_t>(c.bandit.contexts));
    ban.insert("rewards", to_array(c.bandit.rewards));
    ban.insert("reference_logits", to_array(c.bandit.reference_logits));
    ban.insert("noise", c.bandit.noise);
    root.insert("bandit", ban);
  }
  std::ostringstream out;
  out << toml::toml_formatter(root) << '\n';
  return out.str();
}

}  // namespace adrpo
