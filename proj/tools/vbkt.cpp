#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "vbkt/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed_override;
  std::string cell_dir;
};

vbkt::ExperimentConfig resolve(const Options& o) {
  vbkt::ExperimentConfig cfg = o.config.empty() ? vbkt::default_parallel_config() : vbkt::load_config(o.config);
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.seed_override) cfg.seeds = {*o.seed_override};
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayesian knowledge transfer experiments"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config (defaults when omitted)");
    sub->add_option("--out", o.out, "output root, overrides output_dir");
    sub->add_option("--seed-override", o.seed_override, "replace the seed list with one seed");
  };
  CLI::App* gen = app.add_subcommand("generate", "write source, target-train and target-test datasets");
  CLI::App* prior = app.add_subcommand("fit-prior", "fit per-class latent priors on the source model");
  CLI::App* sigma = app.add_subcommand("estimate-sigma", "estimate the fixed latent variance from augmentation");
  CLI::App* run = app.add_subcommand("run", "train every (method, seed) cell and write results.csv");
  CLI::App* analyze = app.add_subcommand("analyze", "discrepancy matrices and embeddings for one finished cell");
  for (CLI::App* sub : {gen, prior, sigma, run}) add_common(sub);
  run->add_option("--jobs", o.jobs, "cells trained concurrently")->check(CLI::PositiveNumber);
  analyze->add_option("cell", o.cell_dir, "runs/<hash>/<method>/<seed>")->required();
  analyze->add_option("--config", o.config, "config supplying the analysis section");
  analyze->add_option("--out", o.out, "output directory (default: the cell directory)");
  analyze->add_option("--seed-override", o.seed_override, "sample-selection seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      vbkt::cmd_generate(resolve(o), &std::cout);
    } else if (prior->parsed()) {
      std::cout << vbkt::cmd_fit_prior(resolve(o), &std::cerr).string() << '\n';
    } else if (sigma->parsed()) {
      std::cout << vbkt::cmd_estimate_sigma(resolve(o), &std::cerr).string() << '\n';
    } else if (run->parsed()) {
      const vbkt::RunSummary s = vbkt::cmd_run(resolve(o), {o.jobs, &std::cerr});
      std::cout << (s.root / "results.csv").string() << '\n';
      std::cerr << s.trained << " trained, " << s.skipped << " resumed, " << s.failed << " failed\n";
      if (s.failed > 0) return 2;
    } else if (analyze->parsed()) {
      vbkt::AnalysisConfig a = o.config.empty() ? vbkt::AnalysisConfig{} : vbkt::load_config(o.config).analysis;
      if (o.seed_override) a.seed = *o.seed_override;
      std::optional<fs::path> out;
      if (!o.out.empty()) out = o.out;
      for (const auto& p : vbkt::cmd_analyze(o.cell_dir, a, out)) std::cout << p.string() << '\n';
    }
  } catch (const vbkt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
