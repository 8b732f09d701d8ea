#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "vbkt/model.hpp"
#include "vbkt/prior.hpp"
#include "vbkt/tensor.hpp"

namespace vbkt {

/// Fixed-variance Gaussian mean-field settings. sigma2 holds one shared
/// variance, or one variance per latent dimension.
struct GmfConfig {
  std::vector<double> sigma2{1.0};
  double kl_weight = 1.0;

  void validate(std::size_t latent_dim) const;
  Tensor variance() const;  // shape (1) or (M)
};

struct EbConfig {
  double kl_weight = 1.0;
  /// Multiplies the prior variances inside the KL term. Sampling always uses
  /// the fitted class variances.
  double prior_variance_scale = 1.0;
  /// Multiplies the sampling variances; 0 samples z = mu.
  double sample_variance_scale = 1.0;

  void validate() const;
};

struct RelationConfig {
  double beta = 0.1;
  std::size_t group_size = 32;

  void validate() const;
};

struct TslConfig {
  double temperature = 1.0;
  double weight = 1.0;

  void validate() const;
};

struct LossWeights {
  double kl = 0.0;
  double relational = 0.0;
  double tsl = 0.0;
};

/// Scalar values of one step's objective terms. nll and kl are per-sample
/// averages over the batch.
struct LossBreakdown {
  double nll = 0.0;
  double kl = 0.0;
  double relational = 0.0;
  double tsl = 0.0;
  double total = 0.0;

  /// nll + w.kl*kl + w.relational*relational + w.tsl*tsl, evaluated in the
  /// same order as the differentiated graph.
  double recompute_total(const LossWeights& w) const;
};

struct ObjectiveParts {
  Tensor nll;
  std::optional<Tensor> kl;
  std::optional<Tensor> relational;
  std::optional<Tensor> tsl;
};

struct LossTerms {
  Tensor total;
  LossBreakdown breakdown;
};

LossTerms compose_loss(Tape& tape, const ObjectiveParts& parts, const LossWeights& weights);

// --- closed forms on plain vectors ---------------------------------------

/// KL(N(mu_t, diag s2_t) || N(mu_s, diag s2_s)).
double kl_diag_gaussians(std::span<const double> mu_t, std::span<const double> sigma2_t,
                         std::span<const double> mu_s, std::span<const double> sigma2_s);

struct GaussianComponent {
  std::vector<double> mu;
  std::vector<double> sigma2;
};

/// Mean KL over all ordered component pairs, i == j included.
double relational_value(std::span<const GaussianComponent> components);

/// Smoothed L1: 0.5 d^2 for |d| <= 1, |d| - 0.5 otherwise.
double huber(double x, double y);

// --- differentiable terms -------------------------------------------------

/// scale * sum_i sum_m (mu_t - mu_s)^2 / (2 sigma2_m); sigma2 of shape (1) or (M).
Tensor gmf_kl_term(Tape& tape, const Tensor& mu_t, const Tensor& mu_s, const Tensor& sigma2,
                   double scale = 1.0);
double gmf_kl_term(const Tensor& mu_t, const Tensor& mu_s, double sigma2);

/// scale * sum_i sum_m (mu_t - mu_c)^2 / (2 sigma2_c,m) with c the label of row i.
Tensor eb_kl_term(Tape& tape, const Tensor& mu_t, std::span<const std::size_t> labels,
                  const ClassPrior& prior, double scale = 1.0);
double eb_kl_term(const Tensor& mu_t, std::span<const std::size_t> labels, const ClassPrior& prior);

/// Mean cross-entropy of softmax(logits) against hard labels.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels);

/// Relational value of a mixture whose component means are rows of `means`
/// (differentiable) and whose variances are the constant rows of `variances`.
Tensor relational_value(Tape& tape, const Tensor& means, const Tensor& variances);

/// huber(V(target group), V(source group)); the source group is constant.
Tensor relational_term(Tape& tape, const Tensor& mu_t, const Tensor& sigma2_t, const Tensor& mu_s,
                       const Tensor& sigma2_s);

/// T^2 * mean over rows of KL(softmax(teacher/T) || softmax(student/T)).
Tensor tsl_loss(Tape& tape, const Tensor& student_logits, const Tensor& teacher_logits,
                const TslConfig& cfg);
double tsl_loss(const Tensor& student_logits, const Tensor& teacher_logits, const TslConfig& cfg);

// --- full objectives ------------------------------------------------------

struct Batch {
  Tensor x;
  std::vector<std::size_t> labels;
};

struct ElboParts {
  TrainForward forward;
  ObjectiveParts parts;
};

/// Parallel-data ELBO pieces: one reparameterized sample per row with the
/// fixed variance, nll = mean CE, kl = gmf_kl_term / batch. source_mu holds
/// the frozen source model's latent means on the paired source inputs.
ElboParts gmf_elbo_parts(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                         const Tensor& source_mu, const GmfConfig& cfg);
LossTerms gmf_elbo_loss(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                        const Tensor& source_mu, const GmfConfig& cfg);
/// gmf_elbo_parts with the latent means mu = theta(x) already computed.
ElboParts gmf_elbo_from_latent(Tape& tape, const LatentSplitModel& target, const Tensor& mu,
                               std::span<const std::size_t> labels, const Tensor& source_mu,
                               const GmfConfig& cfg);

/// Empirical-Bayes ELBO pieces: row i is sampled with its class's fitted
/// variance; kl = eb_kl_term / batch against the (optionally inflated) prior.
ElboParts eb_elbo_parts(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                        const ClassPrior& prior, const EbConfig& cfg);
LossTerms eb_elbo_loss(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                       const ClassPrior& prior, const EbConfig& cfg);
ElboParts eb_elbo_from_latent(Tape& tape, const LatentSplitModel& target, const Tensor& mu,
                              std::span<const std::size_t> labels, const ClassPrior& prior,
                              const EbConfig& cfg);

/// Relational term for parallel data: the first min(group_size, batch) rows
/// of the batch, each with the shared fixed variance.
Tensor gmf_relational_term(Tape& tape, const Tensor& mu_t, const Tensor& source_mu,
                           const GmfConfig& gmf, const RelationConfig& cfg);

/// Relational term for non-parallel data: one component per class present in
/// the batch; target means are per-class batch means of mu_t, source
/// components are the prior's. Both use the prior variances.
Tensor eb_relational_term(Tape& tape, const Tensor& mu_t, std::span<const std::size_t> labels,
                          const ClassPrior& prior);

}  // namespace vbkt
