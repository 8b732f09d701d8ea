#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "vbkt/data.hpp"
#include "vbkt/model.hpp"
#include "vbkt/trainer.hpp"

namespace vbkt {

/// Invalid or unreadable configuration; the CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BenchmarkConfig {
  std::size_t num_classes = 10;
  std::size_t input_dim = 20;
  std::size_t n_source = 5000;
  std::size_t n_target = 400;
  std::size_t n_target_test = 2000;
  std::size_t n_source_test = 2000;
  double separation = 3.0;
  double spread = 1.0;
  std::uint64_t data_seed = 7;
  bool parallel = true;
  ShiftKind shift_kind = ShiftKind::affine_channel;
  double shift_strength = 1.2;  // affine
  double shift_bias = 1.0;      // affine
  std::vector<double> noise_levels{4.0, 3.0, 2.0, 1.4, 1.0};
  double noise_colour = 3.0;
  std::uint64_t shift_seed = 11;

  ShiftSpec shift() const;
  ClusterLayout layout() const;
};

struct SigmaConfig {
  std::size_t n_aug = 20;
  double strength = 0.5;
  std::uint64_t seed = 5;
  SigmaMode mode = SigmaMode::scalar;
  double variance_floor = 1e-6;
};

struct AnalysisConfig {
  std::size_t samples_per_class = 30;
  std::uint64_t seed = 1;
};

/// A method entry: a base method plus optional "_rela" and "_tsl" suffixes,
/// e.g. "vbkt_gmf_rela" or "one_hot_tsl".
struct MethodVariant {
  Method method = Method::one_hot;
  bool relational = false;
  bool tsl = false;

  std::string name() const;
};

MethodVariant parse_method_variant(const std::string& name);

struct ExperimentConfig {
  BenchmarkConfig benchmark;
  ModelSpec model;
  SgdConfig source_training{30, 64, 0.05, 3};
  SigmaConfig sigma;
  double prior_variance_floor = 1e-6;
  TrainConfig training;                 // method and seed are filled per cell
  bool gmf_sigma2_fixed = false;        // true when training.gmf.sigma2 came from the config
  std::map<std::string, nlohmann::json> method_overrides;  // keyed by method entry name
  std::vector<std::string> methods{"no_transfer", "one_hot", "tsl", "vbkt_gmf", "vbkt_gmf_rela"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path output_dir = "runs";
  AnalysisConfig analysis;

  void validate() const;
  /// Training config for one cell, before sigma2 injection.
  TrainConfig cell_config(const std::string& method_name, std::uint64_t seed) const;
  /// Everything except methods, seeds and output_dir, as canonical JSON.
  nlohmann::json identity_json() const;
  /// 16 hex digits of FNV-1a over identity_json().dump().
  std::string hash() const;
};

ExperimentConfig default_parallel_config();
ExperimentConfig default_nonparallel_config();

/// Missing keys keep the parallel defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

struct BenchmarkData {
  DomainDataset source;
  DomainDataset target_train;
  DomainDataset target_test;
};

/// In-memory generation; cmd_generate writes exactly these three datasets.
BenchmarkData generate_benchmark(const BenchmarkConfig& b);
/// Clean held-out source split drawn from the same layout.
DomainDataset source_test_split(const BenchmarkConfig& b);

/// runs/<hash>/...
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path data_dir() const { return root / "data"; }
  std::filesystem::path source_data() const { return data_dir() / "source.csv"; }
  std::filesystem::path target_train() const { return data_dir() / "target_train.csv"; }
  std::filesystem::path target_test() const { return data_dir() / "target_test.csv"; }
  std::filesystem::path source_checkpoint() const { return root / "source" / "checkpoint.txt"; }
  std::filesystem::path prior() const { return root / "prior.txt"; }
  std::filesystem::path sigma() const { return root / "sigma.json"; }
  std::filesystem::path results() const { return root / "results.csv"; }
  std::filesystem::path cell(const std::string& method, std::uint64_t seed) const {
    return root / method / std::to_string(seed);
  }
};

RunLayout run_layout(const ExperimentConfig& cfg);

struct RunOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

struct CellResult {
  std::string method;
  std::uint64_t seed = 0;
  std::string status;  // "ok", "resumed" or "failed: <message>"
  std::optional<double> accuracy;
};

struct RunSummary {
  std::filesystem::path root;
  std::vector<CellResult> cells;
  std::size_t trained = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;
};

// Each command returns the files it wrote, in a fixed order.
std::vector<std::filesystem::path> cmd_generate(const ExperimentConfig& cfg, std::ostream* log = nullptr);
std::filesystem::path cmd_fit_prior(const ExperimentConfig& cfg, std::ostream* log = nullptr);
std::filesystem::path cmd_estimate_sigma(const ExperimentConfig& cfg, std::ostream* log = nullptr);
RunSummary cmd_run(const ExperimentConfig& cfg, const RunOptions& options = {});
/// Per-class discrepancy matrices on the target test split and the embedding
/// table for a finished cell directory. Output goes to out_dir (default: the cell).
std::vector<std::filesystem::path> cmd_analyze(const std::filesystem::path& cell_dir, const AnalysisConfig& analysis,
                                               const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// "row,method,seed,n,status,accuracy_pct,std_pct": one "run" row per cell,
/// then one "summary" row per method (mean and sample std of ok cells).
std::string results_csv(const std::vector<std::string>& methods, const std::vector<CellResult>& cells);

struct MethodSummary {
  std::size_t n = 0;
  double mean_pct = 0.0;
  double std_pct = 0.0;
};

std::map<std::string, MethodSummary> summarize(const std::vector<CellResult>& cells);

}  // namespace vbkt
