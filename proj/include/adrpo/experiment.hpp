#pragma once

// Seeded multi-run orchestration, on-disk artifacts and run comparison.
//
// Layout of a run directory:
//   config.resolved.toml
//   reference.ckpt                 (fm only)
//   seed-<s>/metrics.jsonl         one MetricsRecord per iteration, flushed each line
//   seed-<s>/timing.jsonl          wall clock per iteration, kept apart so metrics stay byte-stable
//   seed-<s>/checkpoint-<n>.ckpt   every checkpoint_every iterations (fm)
//   seed-<s>/policy-<n>.json       same, for bandit logits (pg)
//   seed-<s>/FAILED                present when the sub-run threw
//   summary.json

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adrpo/checkpoint.hpp"
#include "adrpo/config.hpp"
#include "adrpo/fmtrain.hpp"
#include "adrpo/metrics.hpp"
#include "adrpo/pgtrain.hpp"
#include "adrpo/svg.hpp"

namespace adrpo {

namespace fs = std::filesystem;

/// --out wins, then the config's output, then $ADRPO_OUT/<method>, then runs/<method>.
inline fs::path resolve_output(const ExperimentConfig& cfg, const std::string& override_dir = {}) {
  if (!override_dir.empty()) return override_dir;
  if (!cfg.output.empty()) return cfg.output;
  const char* env = std::getenv("ADRPO_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("runs");
  return root / cfg.method;
}

/// Distinct directory names even when a seed is listed twice.
inline std::vector<std::string> seed_dirs(const std::vector<std::uint64_t>& seeds) {
  std::vector<std::string> out;
  std::map<std::uint64_t, int> seen;
  for (auto s : seeds) {
    const int k = seen[s]++;
    out.push_back("seed-" + std::to_string(s) + (k ? "." + std::to_string(k) : ""));
  }
  return out;
}

inline PretrainOptions pretrain_options(const ExperimentConfig& cfg) {
  PretrainOptions p;
  p.target = cfg.pretrain.target;
  p.num_contexts = cfg.env.num_contexts();
  p.hidden = cfg.hidden;
  p.activation = cfg.activation;
  p.steps = cfg.pretrain.steps;
  p.batch_size = cfg.pretrain.batch_size;
  p.lr = cfg.pretrain.lr;
  p.seed = cfg.pretrain.seed;
  p.w2_threshold = cfg.pretrain.w2_threshold;
  p.eval_points = cfg.pretrain.eval_points;
  p.sampler = cfg.sampler;
  return p;
}

inline FmTrainOptions fm_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  FmTrainOptions o;
  o.method = fm_method_from_string(cfg.method);
  o.reg = cfg.reg;
  o.env = cfg.env;
  o.batch_size = cfg.batch_size;
  o.lr = cfg.lr;
  o.optimizer = optimizer_from_string(cfg.optimizer);
  o.sampler = cfg.sampler;
  o.seed = seed;
  o.probe_count = cfg.probe_count;
  return o;
}

inline BanditOptions bandit_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  BanditOptions o;
  o.method = pg_method_from_string(cfg.method);
  o.reg = cfg.reg;
  o.group_size = cfg.group_size;
  o.lr = cfg.lr;
  o.clip_epsilon = cfg.clip_epsilon;
  o.kl_mode = cfg.kl_mode;
  o.seed = seed;
  return o;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

/// Loads the configured reference checkpoint or pretrains one (and saves it
/// to `save_to` when given).
inline Mlp<double> obtain_reference(const ExperimentConfig& cfg, const fs::path& save_to = {},
                                    std::ostream* log = nullptr) {
  const auto widths = velocity_topology(cfg.env.dim(), cfg.env.num_contexts(), cfg.hidden);
  if (!cfg.pretrain.checkpoint.empty()) {
    auto net = load_checkpoint<double>(cfg.pretrain.checkpoint, widths, cfg.activation);
    if (!save_to.empty()) save_checkpoint(save_to, net);
    return net;
  }
  if (log) *log << "pretraining reference (" << cfg.pretrain.steps << " steps)\n";
  auto res = pretrain_reference(pretrain_options(cfg));
  if (log) *log << "reference W2 to target: " << res.w2 << "\n";
  if (!save_to.empty()) save_checkpoint(save_to, res.net);
  return res.net;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::string dir;
  bool ok = true;
  std::string error;
  std::vector<MetricsRecord> records;
};

struct RunResult {
  fs::path dir;
  std::vector<SeedResult> seeds;
  bool ok() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; });
  }
};

struct MetricSummary {
  double mean = 0;
  double stddev = 0;  // sample standard deviation, 0 for a single seed
  std::size_t n = 0;
};

/// Final-iteration statistics across seeds, keyed by metric name.
inline std::map<std::string, MetricSummary> summarize(const std::vector<std::vector<MetricsRecord>>& runs) {
  std::map<std::string, std::vector<double>> vals;
  for (const auto& recs : runs) {
    if (recs.empty()) continue;
    const auto& f = recs.back();
    vals["reward_mean"].push_back(f.reward_mean);
    auto add = [&](const char* k, const std::optional<double>& v) {
      if (v) vals[k].push_back(*v);
    };
    add("diversity", f.diversity);
    add("w2_to_reference", f.w2_to_reference);
    add("velocity_divergence", f.velocity_divergence);
    add("entropy", f.entropy);
    add("kl", f.kl);
    add("expected_reward", f.expected_reward);
    add("best_action_mass", f.best_action_mass);
  }
  std::map<std::string, MetricSummary> out;
  for (const auto& [k, v] : vals) {
    MetricSummary s;
    s.n = v.size();
    for (double x : v) s.mean += x;
    s.mean /= static_cast<double>(s.n);
    if (s.n > 1) {
      double ss = 0;
      for (double x : v) ss += (x - s.mean) * (x - s.mean);
      s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    out[k] = s;
  }
  return out;
}

inline nlohmann::ordered_json summary_json(const std::map<std::string, MetricSummary>& s) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [k, v] : s) j[k] = {{"mean", v.mean}, {"stddev", v.stddev}, {"n", v.n}};
  return j;
}

/// Parses a metrics JSONL file. Empty files are an error naming the file.
inline std::vector<MetricsRecord> read_metrics(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open metrics file " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(f, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      out.push_back(metrics_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), no);
    }
  }
  if (out.empty()) throw UsageError("metrics file " + path.string() + " is empty");
  return out;
}

namespace detail {

inline void write_policy_json(const fs::path& path, const PolicyTable& p) {
  nlohmann::json j;
  j["contexts"] = p.contexts();
  j["actions"] = p.actions();
  j["logits"] = std::vector<double>(p.logits().begin(), p.logits().end());
  write_text(path, j.dump() + "\n");
}

template <class Trainer, class Save>
SeedResult run_seed(Trainer& trainer, const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir,
                    Save&& save_checkpoint_at) {
  SeedResult res;
  res.seed = seed;
  res.dir = dir.filename().string();
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  std::ofstream timing(dir / "timing.jsonl", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) throw IoError("cannot create metrics files in " + dir.string());
  try {
    for (std::size_t i = 0; i < cfg.budget; ++i) {
      MetricsRecord r = trainer.step();
      metrics << to_jsonl_line(r) << std::flush;
      timing << nlohmann::json{{"iteration", r.iteration}, {"wall_clock_ms", r.wall_clock_ms}}.dump() << '\n'
             << std::flush;
      res.records.push_back(std::move(r));
      if (cfg.checkpoint_every > 0 && trainer.iteration() % cfg.checkpoint_every == 0)
        save_checkpoint_at(dir, trainer.iteration());
    }
  } catch (const Error& e) {
    res.ok = false;
    res.error = e.what();
    write_text(dir / "FAILED", res.error + "\n");
  }
  return res;
}

}  // namespace detail

/// Runs every seed of the experiment into `out`. A failing seed leaves its
/// partial artifacts plus a FAILED marker; the remaining seeds still run.
inline RunResult run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::ostream* log = nullptr) {
  validate(cfg);
  fs::create_directories(out);
  ExperimentConfig resolved = cfg;
  resolved.output = out.string();
  write_text(out / "config.resolved.toml", serialize_config(resolved));

  RunResult result;
  result.dir = out;
  const auto names = seed_dirs(cfg.seeds);

  if (cfg.kind == ExperimentKind::kFm) {
    const auto reference = obtain_reference(cfg, out / "reference.ckpt", log);
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
      const auto dir = out / names[k];
      try {
        FmTrainer trainer(reference, fm_options(cfg, cfg.seeds[k]));
        result.seeds.push_back(detail::run_seed(trainer, cfg, cfg.seeds[k], dir, [&](const fs::path& d, std::size_t n) {
          save_checkpoint(d / ("checkpoint-" + std::to_string(n) + ".ckpt"), trainer.policy());
        }));
        save_checkpoint(dir / "final.ckpt", trainer.policy());
      } catch (const Error& e) {
        fs::create_directories(dir);
        write_text(dir / "FAILED", std::string(e.what()) + "\n");
        result.seeds.push_back({cfg.seeds[k], names[k], false, e.what(), {}});
      }
      if (log) *log << names[k] << (result.seeds.back().ok ? ": ok" : ": FAILED " + result.seeds.back().error) << "\n";
    }
  } else {
    const auto spec = cfg.bandit.resolve();
    for (std::size_t k = 0; k < cfg.seeds.size(); ++k) {
      const auto dir = out / names[k];
      try {
        BanditTrainer trainer(spec, bandit_options(cfg, cfg.seeds[k]));
        result.seeds.push_back(detail::run_seed(trainer, cfg, cfg.seeds[k], dir, [&](const fs::path& d, std::size_t n) {
          detail::write_policy_json(d / ("policy-" + std::to_string(n) + ".json"), trainer.policy());
        }));
        detail::write_policy_json(dir / "final-policy.json", trainer.policy());
      } catch (const Error& e) {
        fs::create_directories(dir);
        write_text(dir / "FAILED", std::string(e.what()) + "\n");
        result.seeds.push_back({cfg.seeds[k], names[k], false, e.what(), {}});
      }
      if (log) *log << names[k] << (result.seeds.back().ok ? ": ok" : ": FAILED " + result.seeds.back().error) << "\n";
    }
  }

  std::vector<std::vector<MetricsRecord>> all;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (const auto& s : result.seeds) {
    all.push_back(s.records);
    nlohmann::ordered_json r{{"seed", s.seed}, {"dir", s.dir}, {"status", s.ok ? "ok" : "failed"},
                             {"iterations", s.records.size()}};
    if (!s.ok) r["error"] = s.error;
    runs.push_back(r);
  }
  nlohmann::ordered_json summary{{"schema", kMetricsSchema},
                                 {"kind", to_string(cfg.kind)},
                                 {"method", cfg.method},
                                 {"runs", runs},
                                 {"final", summary_json(summarize(all))}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  if (log) {
    for (const auto& [k, v] : summarize(all))
      *log << "  " << std::left << std::setw(20) << k << std::fixed << std::setprecision(4) << v.mean << " +- "
           << v.stddev << "\n";
  }
  return result;
}

struct LoadedRun {
  fs::path dir;
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
};

inline LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  run.config = load_config(dir / "config.resolved.toml");
  const auto names = seed_dirs(run.config.seeds);
  for (std::size_t k = 0; k < names.size(); ++k) {
    SeedResult s;
    s.seed = run.config.seeds[k];
    s.dir = names[k];
    s.ok = !fs::exists(dir / names[k] / "FAILED");
    s.records = read_metrics(dir / names[k] / "metrics.jsonl");
    run.seeds.push_back(std::move(s));
  }
  return run;
}

inline TradeoffAxis default_axis(ExperimentKind k) {
  return k == ExperimentKind::kFm ? TradeoffAxis::kDiversity : TradeoffAxis::kEntropy;
}

struct SeedVerdict {
  std::uint64_t seed_a = 0, seed_b = 0;
  Dominance verdict = Dominance::kIncomparable;
  TrajectoryPoint final_a, final_b;
};

struct CompareReport {
  TradeoffAxis axis = TradeoffAxis::kDiversity;
  std::string method_a, method_b;
  std::vector<SeedVerdict> verdicts;
  std::string table;
  std::string svg;
};

inline std::string render_runs_svg(const std::vector<const LoadedRun*>& runs, TradeoffAxis axis) {
  std::vector<SvgSeries> series;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& color = palette()[r % palette().size()];
    for (const auto& s : runs[r]->seeds)
      series.push_back({runs[r]->config.method, s.seed, color, pareto_trajectory(s.records, axis)});
  }
  std::string title;
  for (const auto* r : runs) title += (title.empty() ? "" : " vs ") + r->config.method;
  return render_trajectories(series, title, "reward", to_string(axis));
}

/// Pairs seeds by position and reports per-seed dominance of A over B.
inline CompareReport compare_runs(const LoadedRun& a, const LoadedRun& b) {
  if (a.config.kind != b.config.kind)
    throw UsageError("cannot compare a " + to_string(a.config.kind) + " run with a " + to_string(b.config.kind) + " run");
  if (a.seeds.size() != b.seeds.size()) throw UsageError("runs have different seed counts");
  CompareReport rep;
  rep.axis = default_axis(a.config.kind);
  rep.method_a = a.config.method;
  rep.method_b = b.config.method;
  for (std::size_t k = 0; k < a.seeds.size(); ++k) {
    const auto ta = pareto_trajectory(a.seeds[k].records, rep.axis);
    const auto tb = pareto_trajectory(b.seeds[k].records, rep.axis);
    rep.verdicts.push_back({a.seeds[k].seed, b.seeds[k].seed, dominance(ta, tb), ta.final_point(), tb.final_point()});
  }

  std::ostringstream t;
  t << std::fixed << std::setprecision(4);
  t << "A = " << a.config.method << " (" << a.dir.string() << ")\n";
  t << "B = " << b.config.method << " (" << b.dir.string() << ")\n\n";
  t << "per-seed verdicts (" << to_string(rep.axis) << " axis)\n";
  for (const auto& v : rep.verdicts) {
    std::string word = to_string(v.verdict);
    if (v.verdict == Dominance::kFirst) word = "A dominates";
    if (v.verdict == Dominance::kSecond) word = "B dominates";
    t << "  seed " << v.seed_a << ": " << word << "  (A reward " << v.final_a.reward << ", " << v.final_a.secondary
      << " | B reward " << v.final_b.reward << ", " << v.final_b.secondary << ")\n";
  }
  std::vector<std::vector<MetricsRecord>> ra, rb;
  for (const auto& s : a.seeds) ra.push_back(s.records);
  for (const auto& s : b.seeds) rb.push_back(s.records);
  const auto sa = summarize(ra), sb = summarize(rb);
  t << "\nfinal mean +- stddev across seeds\n";
  t << "  " << std::left << std::setw(20) << "metric" << std::setw(24) << "A" << "B\n";
  for (const auto& [k, v] : sa) {
    auto it = sb.find(k);
    std::ostringstream ca, cb;
    ca << std::fixed << std::setprecision(4) << v.mean << " +- " << v.stddev;
    if (it != sb.end()) cb << std::fixed << std::setprecision(4) << it->second.mean << " +- " << it->second.stddev;
    t << "  " << std::left << std::setw(20) << k << std::setw(24) << ca.str() << cb.str() << "\n";
  }
  rep.table = t.str();
  rep.svg = render_runs_svg({&a, &b}, rep.axis);
  return rep;
}

}  // namespace adrpo
