#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "vbkt/data.hpp"
#include "vbkt/losses.hpp"
#include "vbkt/model.hpp"
#include "vbkt/prior.hpp"

namespace vbkt {

enum class Method { no_transfer, one_hot, tsl, vbkt_gmf, vbkt_eb };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name);

struct SgdConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainConfig {
  Method method = Method::one_hot;
  bool use_relational = false;
  bool combine_tsl = false;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  std::uint64_t seed = 1;
  GmfConfig gmf;
  EbConfig eb;
  RelationConfig relation;
  TslConfig tsl;

  SgdConfig sgd() const { return {epochs, batch_size, learning_rate, seed}; }
  /// Weights of kl / relational / tsl in the total for this method.
  LossWeights weights() const;
  void validate() const;
};

/// Frozen inputs an adaptation method may read. None of them is modified.
struct TransferSources {
  const LatentSplitModel* source_model = nullptr;
  const DomainDataset* source_data = nullptr;  // sister dataset of target pair_index
  const ClassPrior* prior = nullptr;
};

struct TrainReport {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<LossBreakdown> epochs;  // per-epoch means over steps
  std::optional<double> accuracy;     // on the evaluation split, when given
  double wall_clock_seconds = 0.0;

  /// Timing is excluded by default so reports of identical runs are byte-identical.
  nlohmann::json to_json(bool include_timing = false) const;
};

/// One SGD step's objective over the given sample indices.
using StepObjective =
    std::function<LossTerms(Tape& tape, const LatentSplitModel& model, std::span<const std::size_t> batch)>;
/// Called after every step with (global step, breakdown).
using StepObserver = std::function<void(std::size_t, const LossBreakdown&)>;

/// Permutation of [0, n) used for epoch `epoch`; a pure function of its arguments.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

/// Plain constant-rate SGD over epochs x ceil(n / batch) steps. Each step
/// zeroes gradients, runs the objective on a fresh Tape(seed, step), and
/// updates every parameter.
TrainReport run_sgd(LatentSplitModel& model, std::size_t n_samples, const SgdConfig& cfg,
                    const StepObjective& objective, const StepObserver& observer = {});

/// Source copy for transfer methods, fresh random weights for no_transfer.
LatentSplitModel initial_model(Method method, const LatentSplitModel& source, std::uint64_t seed);

struct TrainResult {
  LatentSplitModel model;
  TrainReport report;
};

/// Adapts `init` on `target` with cfg.method. Prerequisites (pairing, source
/// model, prior) are checked before the first step.
TrainResult train(const LatentSplitModel& init, const DomainDataset& target, const TransferSources& sources,
                  const TrainConfig& cfg, const DomainDataset* eval = nullptr,
                  const StepObserver& observer = {});

/// Trains a source model from scratch with plain cross-entropy.
LatentSplitModel train_source(const ModelSpec& spec, const DomainDataset& source, const SgdConfig& cfg);

enum class SigmaMode { scalar, vector };

/// Latent spread under input augmentation: per-sample std across n_aug
/// jittered copies, averaged over samples, then squared. Scalar mode also
/// averages the std over latent dimensions. Result is floored at variance_floor.
std::vector<double> estimate_sigma(const LatentSplitModel& source_model, const DomainDataset& data,
                                   std::size_t n_aug, double strength, std::uint64_t seed,
                                   SigmaMode mode = SigmaMode::scalar, double variance_floor = 1e-6);

}  // namespace vbkt
