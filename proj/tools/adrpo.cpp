// Command-line front end: pretrain, run, compare, plot, validate.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adrpo/adrpo.hpp"

namespace {

using namespace adrpo;

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != tok.size()) throw ValidationError("seeds", "'" + tok + "' is not a nonnegative integer");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("seeds", "at least one seed is required");
  return out;
}

ExperimentConfig load_with_overrides(const std::string& path, const std::string& seeds, const std::string& method) {
  auto cfg = load_config(path);
  if (!seeds.empty()) cfg.seeds = parse_seed_list(seeds);
  if (!method.empty()) cfg.method = method;
  validate(cfg);
  return cfg;
}

TradeoffAxis axis_from_string(const std::string& s) {
  if (s == "diversity") return TradeoffAxis::kDiversity;
  if (s == "divergence") return TradeoffAxis::kDivergence;
  if (s == "entropy") return TradeoffAxis::kEntropy;
  throw UsageError("unknown axis '" + s + "' (diversity, divergence, entropy)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive divergence regularized policy optimization lab"};
  app.require_subcommand(1);

  std::string config, out, seeds, method, axis;
  std::vector<std::string> runs;

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the reference flow of an fm config");
  pretrain->add_option("--config", config, "Experiment TOML")->required();
  pretrain->add_option("--out", out, "Output directory");

  auto* run = app.add_subcommand("run", "Run every seed of an experiment");
  run->add_option("--config", config, "Experiment TOML")->required();
  run->add_option("--out", out, "Output directory (default $ADRPO_OUT/<method>)");
  run->add_option("--seeds", seeds, "Comma-separated seed list overriding the config");
  run->add_option("--method", method, "Method overriding the config");

  auto* compare = app.add_subcommand("compare", "Per-seed dominance report and trajectory plot for two runs");
  compare->add_option("runs", runs, "Run directories A and B")->required()->expected(2);
  compare->add_option("--out", out, "Directory for report.txt and trajectories.svg");

  auto* plot = app.add_subcommand("plot", "Trajectory SVG for one or more runs");
  plot->add_option("runs", runs, "Run directories")->required()->expected(1, -1);
  plot->add_option("--out", out, "SVG file (default: stdout)");
  plot->add_option("--axis", axis, "diversity, divergence or entropy (default by kind)");

  auto* validate_cmd = app.add_subcommand("validate", "Parse a config and print it with defaults filled in");
  validate_cmd->add_option("--config", config, "Experiment TOML")->required();
  validate_cmd->add_option("--seeds", seeds, "Comma-separated seed list overriding the config");
  validate_cmd->add_option("--method", method, "Method overriding the config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*pretrain) {
      auto cfg = load_config(config);
      if (cfg.kind != ExperimentKind::kFm) throw UsageError("pretrain needs an fm config");
      const auto dir = resolve_output(cfg, out);
      std::filesystem::create_directories(dir);
      auto res = pretrain_reference(pretrain_options(cfg));
      save_checkpoint(dir / "reference.ckpt", res.net);
      std::cout << "reference W2 to target " << res.w2 << " (threshold " << cfg.pretrain.w2_threshold << ")\n"
                << "wrote " << (dir / "reference.ckpt").string() << "\n";
      return 0;
    }
    if (*run) {
      auto cfg = load_with_overrides(config, seeds, method);
      const auto dir = resolve_output(cfg, out);
      auto res = run_experiment(cfg, dir, &std::cout);
      std::cout << "artifacts in " << dir.string() << "\n";
      return res.ok() ? 0 : 1;
    }
    if (*compare) {
      const auto a = load_run(runs[0]);
      const auto b = load_run(runs[1]);
      const auto rep = compare_runs(a, b);
      std::cout << rep.table;
      if (!out.empty()) {
        std::filesystem::create_directories(out);
        write_text(std::filesystem::path(out) / "report.txt", rep.table);
        write_text(std::filesystem::path(out) / "trajectories.svg", rep.svg);
        std::cout << "wrote " << out << "/report.txt and trajectories.svg\n";
      }
      return 0;
    }
    if (*plot) {
      std::vector<LoadedRun> loaded;
      for (const auto& r : runs) loaded.push_back(load_run(r));
      for (const auto& l : loaded)
        if (l.config.kind != loaded.front().config.kind) throw UsageError("cannot plot fm and pg runs together");
      const auto ax = axis.empty() ? default_axis(loaded.front().config.kind) : axis_from_string(axis);
      std::vector<const LoadedRun*> ptrs;
      for (const auto& l : loaded) ptrs.push_back(&l);
      const auto svg = render_runs_svg(ptrs, ax);
      if (out.empty())
        std::cout << svg;
      else
        write_text(out, svg);
      return 0;
    }
    if (*validate_cmd) {
      auto cfg = load_with_overrides(config, seeds, method);
      std::cout << serialize_config(cfg);
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
