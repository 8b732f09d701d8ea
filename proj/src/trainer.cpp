#include "vbkt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vbkt/metrics.hpp"
#include "vbkt/rng.hpp"

namespace vbkt {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kInitStream = 0x696e6974ULL;

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::no_transfer, "no_transfer"}, {Method::one_hot, "one_hot"}, {Method::tsl, "tsl"},
    {Method::vbkt_gmf, "vbkt_gmf"},       {Method::vbkt_eb, "vbkt_eb"},
};

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.nll += b.nll;
  acc.kl += b.kl;
  acc.relational += b.relational;
  acc.tsl += b.tsl;
  acc.total += b.total;
}

void scale(LossBreakdown& acc, double k) {
  acc.nll *= k;
  acc.kl *= k;
  acc.relational *= k;
  acc.tsl *= k;
  acc.total *= k;
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
  return {{"nll", b.nll}, {"kl", b.kl}, {"relational", b.relational}, {"tsl", b.tsl}, {"total", b.total}};
}

// Rows `batch` of a precomputed (N, k) table.
Tensor take_rows(const Tensor& table, std::span<const std::size_t> batch) {
  const std::size_t k = table.dim(1);
  std::vector<double> out;
  out.reserve(batch.size() * k);
  const auto v = table.values();
  for (std::size_t i : batch) {
    out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(i * k),
               v.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
  }
  return Tensor({batch.size(), k}, std::move(out));
}

}  // namespace

std::string_view to_string(Method m) {
  for (const auto& [k, name] : kMethodNames)
    if (k == m) return name;
  return "unknown";
}

Method method_from_string(std::string_view name) {
  for (const auto& [k, n] : kMethodNames)
    if (n == name) return k;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

void SgdConfig::validate() const {
  if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and nonnegative");
  }
}

LossWeights TrainConfig::weights() const {
  LossWeights w;
  if (method == Method::vbkt_gmf) w.kl = gmf.kl_weight;
  if (method == Method::vbkt_eb) w.kl = eb.kl_weight;
  if (use_relational) w.relational = relation.beta;
  if (method == Method::tsl || combine_tsl) w.tsl = tsl.weight;
  return w;
}

void TrainConfig::validate() const {
  sgd().validate();
  eb.validate();
  relation.validate();
  tsl.validate();
  if (use_relational && method != Method::vbkt_gmf && method != Method::vbkt_eb) {
    throw std::invalid_argument("the relational term applies to vbkt_gmf and vbkt_eb only");
  }
  if (combine_tsl && (method == Method::tsl || method == Method::no_transfer)) {
    throw std::invalid_argument("combine_tsl applies to one_hot and vbkt methods");
  }
}

nlohmann::json TrainReport::to_json(bool include_timing) const {
  nlohmann::json j;
  j["method"] = method;
  j["seed"] = seed;
  j["steps"] = steps;
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) epochs_json.push_back(breakdown_json(e));
  j["epochs"] = std::move(epochs_json);
  j["accuracy"] = accuracy ? nlohmann::json(*accuracy) : nlohmann::json(nullptr);
  if (include_timing) j["wall_clock_seconds"] = wall_clock_seconds;
  return j;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(RngKey{seed, kShuffleStream, epoch});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

TrainReport run_sgd(LatentSplitModel& model, std::size_t n_samples, const SgdConfig& cfg,
                    const StepObjective& objective, const StepObserver& observer) {
  cfg.validate();
  if (n_samples == 0) throw std::invalid_argument("cannot train on an empty dataset");
  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  std::vector<Tensor> params = model.parameters();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(n_samples, cfg.seed, epoch);
    LossBreakdown epoch_sum;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < n_samples; start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, n_samples);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      model.zero_grad();
      Tape tape(cfg.seed, step);
      const LossTerms loss = objective(tape, model, batch);
      tape.backward(loss.total);
      for (Tensor& p : params) {
        const auto g = p.grad();
        if (g.empty()) continue;
        for (double v : g)
          if (!std::isfinite(v)) throw NumericError("non-finite parameter gradient at step " + std::to_string(step));
        axpy(-cfg.learning_rate, g, p.mutable_values());
      }
      accumulate(epoch_sum, loss.breakdown);
      if (observer) observer(step, loss.breakdown);
      ++epoch_steps;
      ++step;
    }
    scale(epoch_sum, 1.0 / static_cast<double>(epoch_steps));
    report.epochs.push_back(epoch_sum);
  }
  model.zero_grad();
  report.steps = step;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

LatentSplitModel initial_model(Method method, const LatentSplitModel& source, std::uint64_t seed) {
  if (method == Method::no_transfer) return LatentSplitModel::random(source.spec(), hash_combine(seed, kInitStream));
  return source.clone();
}

TrainResult train(const LatentSplitModel& init, const DomainDataset& target, const TransferSources& sources,
                  const TrainConfig& cfg, const DomainDataset* eval, const StepObserver& observer) {
  cfg.validate();
  target.validate();
  const std::size_t m = init.spec().latent_dim;
  const bool needs_source = cfg.method == Method::vbkt_gmf || cfg.method == Method::tsl || cfg.combine_tsl;
  if (needs_source && sources.source_model == nullptr) {
    throw std::invalid_argument(std::string(to_string(cfg.method)) + " needs the source model");
  }
  if (cfg.method == Method::vbkt_gmf) {
    cfg.gmf.validate(m);
    if (!target.paired() || sources.source_data == nullptr) {
      throw std::invalid_argument("vbkt_gmf needs parallel data: target pair_index and the paired source dataset");
    }
    for (std::size_t i = 0; i < target.size(); ++i) {
      const std::size_t j = (*target.pair_index)[i];
      if (j >= sources.source_data->size() || sources.source_data->labels[j] != target.labels[i]) {
        throw std::invalid_argument("target pair_index does not match the source dataset");
      }
    }
  }
  if (cfg.method == Method::vbkt_eb) {
    if (sources.prior == nullptr) throw std::invalid_argument("vbkt_eb needs a fitted class prior");
    if (sources.prior->latent_dim() != m || sources.prior->num_classes() < target.num_classes) {
      throw std::invalid_argument("class prior does not cover the target classes");
    }
  }
  if (init.spec().input_dim != target.input_dim() || init.spec().num_classes < target.num_classes) {
    throw std::invalid_argument("model spec does not fit the target dataset");
  }

  // Frozen source quantities, computed once per sample.
  const bool paired = target.paired() && sources.source_data != nullptr;
  Tensor source_inputs = target.x;
  if (paired) source_inputs = sources.source_data->rows(*target.pair_index);
  std::optional<Tensor> source_mu;
  std::optional<Tensor> teacher_logits;
  if (cfg.method == Method::vbkt_gmf) source_mu = sources.source_model->predict_latent(source_inputs);
  if (cfg.weights().tsl > 0.0 || cfg.method == Method::tsl || cfg.combine_tsl) {
    teacher_logits = sources.source_model->predict_logits(source_inputs);
  }

  const LossWeights weights = cfg.weights();
  const StepObjective objective = [&](Tape& tape, const LatentSplitModel& model,
                                      std::span<const std::size_t> idx) -> LossTerms {
    const Batch batch{target.rows(idx), target.labels_at(idx)};
    ObjectiveParts parts;
    Tensor logits;
    switch (cfg.method) {
      case Method::no_transfer:
      case Method::one_hot:
      case Method::tsl: {
        Tensor mu = model.forward_latent(tape, batch.x);
        logits = model.forward_logits(tape, mu);
        parts.nll = cross_entropy(tape, logits, batch.labels);
        break;
      }
      case Method::vbkt_gmf: {
        const Tensor src = take_rows(*source_mu, idx);
        ElboParts e = gmf_elbo_parts(tape, model, batch, src, cfg.gmf);
        if (cfg.use_relational) {
          e.parts.relational = gmf_relational_term(tape, e.forward.latent.mu, src, cfg.gmf, cfg.relation);
        }
        parts = std::move(e.parts);
        logits = e.forward.logits;
        break;
      }
      case Method::vbkt_eb: {
        ElboParts e = eb_elbo_parts(tape, model, batch, *sources.prior, cfg.eb);
        if (cfg.use_relational) {
          e.parts.relational = eb_relational_term(tape, e.forward.latent.mu, batch.labels, *sources.prior);
        }
        parts = std::move(e.parts);
        logits = e.forward.logits;
        break;
      }
    }
    if (weights.tsl > 0.0 || cfg.method == Method::tsl) {
      parts.tsl = tsl_loss(tape, logits, take_rows(*teacher_logits, idx), cfg.tsl);
    }
    return compose_loss(tape, parts, weights);
  };

  TrainResult result{init.clone(), {}};
  result.report = run_sgd(result.model, target.size(), cfg.sgd(), objective, observer);
  result.report.method = std::string(to_string(cfg.method));
  if (eval != nullptr) result.report.accuracy = accuracy(result.model, *eval);
  return result;
}

LatentSplitModel train_source(const ModelSpec& spec, const DomainDataset& source, const SgdConfig& cfg) {
  TrainConfig tc;
  tc.method = Method::one_hot;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = cfg.seed;
  const LatentSplitModel init = LatentSplitModel::random(spec, hash_combine(cfg.seed, kInitStream));
  return train(init, source, {}, tc).model;
}

std::vector<double> estimate_sigma(const LatentSplitModel& source_model, const DomainDataset& data,
                                   std::size_t n_aug, double strength, std::uint64_t seed, SigmaMode mode,
                                   double variance_floor) {
  if (n_aug < 2) throw std::invalid_argument("estimate_sigma needs n_aug >= 2");
  if (data.size() == 0) throw std::invalid_argument("estimate_sigma on an empty dataset");
  const std::vector<Tensor> copies = augment(data.x, n_aug, strength, seed);
  const std::size_t n = data.size(), m = source_model.spec().latent_dim;
  std::vector<double> mean(n * m, 0.0), m2(n * m, 0.0);
  std::size_t k = 0;
  for (const Tensor& copy : copies) {
    ++k;
    const Tensor z = source_model.predict_latent(copy);
    const auto zv = z.values();
    for (std::size_t i = 0; i < n * m; ++i) {
      const double delta = zv[i] - mean[i];
      mean[i] += delta / static_cast<double>(k);
      m2[i] += delta * (zv[i] - mean[i]);
    }
  }
  // Average over samples of the per-sample std, per latent dimension.
  std::vector<double> avg_std(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) avg_std[j] += std::sqrt(m2[i * m + j] / static_cast<double>(n_aug));
  for (double& s : avg_std) s /= static_cast<double>(n);

  std::vector<double> out;
  if (mode == SigmaMode::scalar) {
    const double s = std::accumulate(avg_std.begin(), avg_std.end(), 0.0) / static_cast<double>(m);
    out.push_back(s * s);
  } else {
    for (double s : avg_std) out.push_back(s * s);
  }
  for (double& v : out) v = std::max(v, variance_floor);
  return out;
}

}  // namespace vbkt
