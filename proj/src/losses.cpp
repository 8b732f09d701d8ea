#include "vbkt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace vbkt {

void GmfConfig::validate(std::size_t latent_dim) const {
  if (sigma2.size() != 1 && sigma2.size() != latent_dim) {
    throw std::invalid_argument("gmf sigma2 must have 1 or latent_dim entries");
  }
  for (double v : sigma2)
    if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("gmf sigma2 must be positive");
  if (!(kl_weight >= 0.0)) throw std::invalid_argument("kl_weight must be nonnegative");
}

Tensor GmfConfig::variance() const { return Tensor::vector(sigma2); }

void EbConfig::validate() const {
  if (!(kl_weight >= 0.0)) throw std::invalid_argument("kl_weight must be nonnegative");
  if (!(prior_variance_scale > 0.0) || !std::isfinite(prior_variance_scale)) {
    throw std::invalid_argument("prior_variance_scale must be positive");
  }
  if (!(sample_variance_scale >= 0.0) || !std::isfinite(sample_variance_scale)) {
    throw std::invalid_argument("sample_variance_scale must be nonnegative");
  }
}

void RelationConfig::validate() const {
  if (!(beta >= 0.0)) throw std::invalid_argument("relation beta must be nonnegative");
  if (beta > 0.0 && group_size < 2) throw std::invalid_argument("relation group_size must be >= 2");
}

void TslConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("tsl temperature must be positive");
  if (!(weight >= 0.0)) throw std::invalid_argument("tsl weight must be nonnegative");
}

double LossBreakdown::recompute_total(const LossWeights& w) const {
  double t = nll;
  t = t + w.kl * kl;
  t = t + w.relational * relational;
  t = t + w.tsl * tsl;
  return t;
}

LossTerms compose_loss(Tape& tape, const ObjectiveParts& parts, const LossWeights& weights) {
  // The chain below must mirror LossBreakdown::recompute_total step for step.
  LossBreakdown b;
  b.nll = parts.nll.item();
  Tensor total = parts.nll;
  const auto fold = [&](const std::optional<Tensor>& term, double w, double& slot) {
    slot = term ? term->item() : 0.0;
    if (term) {
      total = tape.add_bias(total, *term, w);
    } else {
      total = tape.add_bias(total, Tensor::scalar(0.0), w);
    }
  };
  fold(parts.kl, weights.kl, b.kl);
  fold(parts.relational, weights.relational, b.relational);
  fold(parts.tsl, weights.tsl, b.tsl);
  b.total = total.item();
  return {total, b};
}

// ---------------------------------------------------------------------------
// Closed forms

double kl_diag_gaussians(std::span<const double> mu_t, std::span<const double> sigma2_t,
                         std::span<const double> mu_s, std::span<const double> sigma2_s) {
  const std::size_t m = mu_t.size();
  if (sigma2_t.size() != m || mu_s.size() != m || sigma2_s.size() != m) {
    throw ShapeError("kl_diag_gaussians: dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (!(sigma2_t[j] > 0.0) || !(sigma2_s[j] > 0.0)) {
      throw std::invalid_argument("kl_diag_gaussians: variances must be positive");
    }
    const double d = mu_t[j] - mu_s[j];
    kl += 0.5 * std::log(sigma2_s[j] / sigma2_t[j]) + (sigma2_t[j] + d * d) / (2.0 * sigma2_s[j]) - 0.5;
  }
  return std::max(kl, 0.0);
}

double relational_value(std::span<const GaussianComponent> components) {
  if (components.empty()) throw std::invalid_argument("relational_value needs at least one component");
  double total = 0.0;
  for (const auto& a : components)
    for (const auto& b : components) total += kl_diag_gaussians(a.mu, a.sigma2, b.mu, b.sigma2);
  const double g = static_cast<double>(components.size());
  return total / (g * g);
}

double huber(double x, double y) {
  const double d = std::abs(x - y);
  return d <= 1.0 ? 0.5 * d * d : d - 0.5;
}

// ---------------------------------------------------------------------------
// Differentiable terms

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// Broadcast a (1) or (M) variance to a (rows, M) table of 1 / (2 sigma2).
Tensor inverse_two_var(const Tensor& sigma2, std::size_t rows, std::size_t m) {
  const auto v = sigma2.values();
  if (v.size() != 1 && v.size() != m) {
    throw ShapeError("variance of shape " + shape_string(sigma2.shape()) + " for latent dim " + std::to_string(m));
  }
  std::vector<double> w(rows * m);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double s = v[v.size() == 1 ? 0 : i % m];
    if (!(s > 0.0)) throw std::invalid_argument("variance must be positive");
    w[i] = 1.0 / (2.0 * s);
  }
  return Tensor({rows, m}, std::move(w));
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  std::vector<double> y(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw std::out_of_range("label out of range for logits");
    y[i * classes + labels[i]] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(y));
}

// Rows of `table` (constant) selected by labels, as a (batch, M) tensor.
template <typename Get>
Tensor gather_rows(std::span<const std::size_t> labels, std::size_t m, Get get) {
  std::vector<double> out;
  out.reserve(labels.size() * m);
  for (std::size_t y : labels) {
    const auto& row = get(y);
    out.insert(out.end(), row.begin(), row.end());
  }
  return Tensor({labels.size(), m}, std::move(out));
}

// (G, B) selector picking the first g rows.
Tensor head_selector(std::size_t g, std::size_t b) {
  std::vector<double> s(g * b, 0.0);
  for (std::size_t i = 0; i < g; ++i) s[i * b + i] = 1.0;
  return Tensor({g, b}, std::move(s));
}

}  // namespace

Tensor gmf_kl_term(Tape& tape, const Tensor& mu_t, const Tensor& mu_s, const Tensor& sigma2, double scale) {
  require_same(mu_t, mu_s, "gmf_kl_term");
  if (mu_t.rank() != 2) throw ShapeError("gmf_kl_term expects (batch, M) means");
  const Tensor w = inverse_two_var(sigma2, mu_t.dim(0), mu_t.dim(1));
  const Tensor diff = tape.add_bias(mu_t, mu_s, -1.0);
  return tape.weighted_sum(tape.square(diff), w, -1, scale);
}

double gmf_kl_term(const Tensor& mu_t, const Tensor& mu_s, double sigma2) {
  Tape tape = Tape::no_grad();
  return gmf_kl_term(tape, mu_t, mu_s, Tensor::scalar(sigma2)).item();
}

Tensor eb_kl_term(Tape& tape, const Tensor& mu_t, std::span<const std::size_t> labels,
                  const ClassPrior& prior, double scale) {
  if (mu_t.rank() != 2 || mu_t.dim(0) != labels.size()) throw ShapeError("eb_kl_term: rows vs labels");
  const std::size_t m = mu_t.dim(1);
  if (prior.latent_dim() != m) throw ShapeError("eb_kl_term: prior latent dim mismatch");
  const Tensor means = gather_rows(labels, m, [&](std::size_t c) -> const std::vector<double>& { return prior.at(c).mu; });
  const Tensor var = gather_rows(labels, m, [&](std::size_t c) -> const std::vector<double>& { return prior.at(c).sigma2; });
  std::vector<double> w(var.values().begin(), var.values().end());
  for (double& v : w) v = 1.0 / (2.0 * v);
  const Tensor diff = tape.add_bias(mu_t, means, -1.0);
  return tape.weighted_sum(tape.square(diff), Tensor(var.shape(), std::move(w)), -1, scale);
}

double eb_kl_term(const Tensor& mu_t, std::span<const std::size_t> labels, const ClassPrior& prior) {
  Tape tape = Tape::no_grad();
  return eb_kl_term(tape, mu_t, labels, prior).item();
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const Tensor y = one_hot(labels, logits.dim(1));
  return tape.weighted_sum(tape.log_softmax(logits), y, -1, -1.0 / static_cast<double>(labels.size()));
}

Tensor relational_value(Tape& tape, const Tensor& means, const Tensor& variances) {
  require_same(means, variances, "relational_value");
  if (means.rank() != 2) throw ShapeError("relational_value expects (G, M) components");
  const std::size_t g = means.dim(0), m = means.dim(1);
  const auto var = variances.values();
  for (double v : var)
    if (!(v > 0.0)) throw std::invalid_argument("relational_value: variances must be positive");

  // Row i*G+j of the difference operator yields mu_i - mu_j.
  std::vector<double> diff_op(g * g * g, 0.0);
  std::vector<double> w(g * g * m);
  double constant = 0.0;
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      const std::size_t row = i * g + j;
      diff_op[row * g + i] += 1.0;
      diff_op[row * g + j] -= 1.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double vi = var[i * m + k], vj = var[j * m + k];
        w[row * m + k] = 1.0 / (2.0 * vj);
        constant += 0.5 * std::log(vj / vi) + vi / (2.0 * vj) - 0.5;
      }
    }
  }
  const double inv_g2 = 1.0 / static_cast<double>(g * g);
  const Tensor pair_diffs = tape.matmul(Tensor({g * g, g}, std::move(diff_op)), means);
  const Tensor quad = tape.weighted_sum(tape.square(pair_diffs), Tensor({g * g, m}, std::move(w)), -1, inv_g2);
  return tape.add_bias(quad, Tensor::scalar(constant * inv_g2));
}

Tensor relational_term(Tape& tape, const Tensor& mu_t, const Tensor& sigma2_t, const Tensor& mu_s,
                       const Tensor& sigma2_s) {
  require_same(mu_t, mu_s, "relational_term group");
  require_same(sigma2_t, sigma2_s, "relational_term variances");
  const Tensor v_t = relational_value(tape, mu_t, sigma2_t);
  Tape frozen = Tape::no_grad();
  const Tensor v_s = relational_value(frozen, mu_s.detached(), sigma2_s);
  return tape.huber(v_t, v_s);
}

Tensor tsl_loss(Tape& tape, const Tensor& student_logits, const Tensor& teacher_logits, const TslConfig& cfg) {
  cfg.validate();
  require_same(student_logits, teacher_logits, "tsl_loss");
  const double t = cfg.temperature;
  const std::size_t rows = student_logits.rank() == 2 ? student_logits.dim(0) : 1;
  Tape frozen = Tape::no_grad();
  const Tensor teacher_log_p = frozen.log_softmax(teacher_logits.detached(), t);
  std::vector<double> p(teacher_log_p.values().begin(), teacher_log_p.values().end());
  for (double& v : p) v = std::exp(v);
  // sum p_t * (log p_t - log p_s): identical logits give exactly zero.
  const Tensor log_ratio = tape.add_bias(tape.log_softmax(student_logits, t), teacher_log_p, -1.0);
  return tape.weighted_sum(log_ratio, Tensor(student_logits.shape(), std::move(p)), -1,
                           -t * t / static_cast<double>(rows));
}

double tsl_loss(const Tensor& student_logits, const Tensor& teacher_logits, const TslConfig& cfg) {
  Tape tape = Tape::no_grad();
  return std::max(tsl_loss(tape, student_logits, teacher_logits, cfg).item(), 0.0);
}

// ---------------------------------------------------------------------------
// Objectives

ElboParts gmf_elbo_parts(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                         const Tensor& source_mu, const GmfConfig& cfg) {
  return gmf_elbo_from_latent(tape, target, target.forward_latent(tape, batch.x), batch.labels, source_mu, cfg);
}

ElboParts gmf_elbo_from_latent(Tape& tape, const LatentSplitModel& target, const Tensor& mu,
                               std::span<const std::size_t> labels, const Tensor& source_mu,
                               const GmfConfig& cfg) {
  cfg.validate(target.spec().latent_dim);
  if (source_mu.shape() != mu.shape()) {
    throw ShapeError("gmf: source means " + shape_string(source_mu.shape()) + " do not pair with batch " +
                     shape_string(mu.shape()));
  }
  if (labels.size() != mu.dim(0)) throw ShapeError("gmf: labels vs latent rows");
  const Tensor var = cfg.variance();
  TrainForward fwd = target.forward_from_latent(tape, mu, var);
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  ObjectiveParts parts{cross_entropy(tape, fwd.logits, labels),
                       gmf_kl_term(tape, fwd.latent.mu, source_mu.detached(), var, inv_b), std::nullopt,
                       std::nullopt};
  return {std::move(fwd), std::move(parts)};
}

LossTerms gmf_elbo_loss(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                        const Tensor& source_mu, const GmfConfig& cfg) {
  const ElboParts e = gmf_elbo_parts(tape, target, batch, source_mu, cfg);
  return compose_loss(tape, e.parts, LossWeights{cfg.kl_weight, 0.0, 0.0});
}

ElboParts eb_elbo_parts(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                        const ClassPrior& prior, const EbConfig& cfg) {
  return eb_elbo_from_latent(tape, target, target.forward_latent(tape, batch.x), batch.labels, prior, cfg);
}

ElboParts eb_elbo_from_latent(Tape& tape, const LatentSplitModel& target, const Tensor& mu,
                              std::span<const std::size_t> labels, const ClassPrior& prior,
                              const EbConfig& cfg) {
  cfg.validate();
  const std::size_t m = target.spec().latent_dim;
  if (prior.latent_dim() != m) throw ShapeError("eb: prior latent dim does not match the model");
  if (labels.size() != mu.dim(0)) throw ShapeError("eb: labels vs latent rows");
  const Tensor sample_var =
      gather_rows(labels, m, [&](std::size_t c) -> const std::vector<double>& { return prior.at(c).sigma2; });
  TrainForward fwd;
  if (cfg.sample_variance_scale == 0.0) {
    Tensor logits = target.forward_logits(tape, mu);
    fwd = {{mu, Tensor::zeros(sample_var.shape()), mu}, std::move(logits)};
  } else if (cfg.sample_variance_scale == 1.0) {
    fwd = target.forward_from_latent(tape, mu, sample_var);
  } else {
    std::vector<double> v(sample_var.values().begin(), sample_var.values().end());
    for (double& x : v) x *= cfg.sample_variance_scale;
    fwd = target.forward_from_latent(tape, mu, Tensor(sample_var.shape(), std::move(v)));
  }
  const ClassPrior kl_prior =
      cfg.prior_variance_scale == 1.0 ? prior : prior.with_variance_scale(cfg.prior_variance_scale);
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  ObjectiveParts parts{cross_entropy(tape, fwd.logits, labels), eb_kl_term(tape, mu, labels, kl_prior, inv_b),
                       std::nullopt, std::nullopt};
  return {std::move(fwd), std::move(parts)};
}

LossTerms eb_elbo_loss(Tape& tape, const LatentSplitModel& target, const Batch& batch,
                       const ClassPrior& prior, const EbConfig& cfg) {
  const ElboParts e = eb_elbo_parts(tape, target, batch, prior, cfg);
  return compose_loss(tape, e.parts, LossWeights{cfg.kl_weight, 0.0, 0.0});
}

Tensor gmf_relational_term(Tape& tape, const Tensor& mu_t, const Tensor& source_mu, const GmfConfig& gmf,
                           const RelationConfig& cfg) {
  cfg.validate();
  require_same(mu_t, source_mu, "gmf_relational_term");
  const std::size_t b = mu_t.dim(0), m = mu_t.dim(1);
  const std::size_t g = std::min(cfg.group_size, b);
  std::vector<double> var(g * m);
  for (std::size_t i = 0; i < var.size(); ++i) var[i] = gmf.sigma2[gmf.sigma2.size() == 1 ? 0 : i % m];
  const Tensor variances({g, m}, std::move(var));
  const Tensor sel = head_selector(g, b);
  Tape frozen = Tape::no_grad();
  const Tensor src = frozen.matmul(sel, source_mu.detached());
  const Tensor tgt = g == b ? mu_t : tape.matmul(sel, mu_t);
  return relational_term(tape, tgt, variances, src, variances);
}

Tensor eb_relational_term(Tape& tape, const Tensor& mu_t, std::span<const std::size_t> labels,
                          const ClassPrior& prior) {
  if (mu_t.rank() != 2 || mu_t.dim(0) != labels.size()) throw ShapeError("eb_relational_term: rows vs labels");
  const std::size_t b = labels.size(), m = mu_t.dim(1);
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t y : labels) ++counts[y];
  const std::size_t g = counts.size();
  std::vector<double> avg(g * b, 0.0);
  std::vector<double> src_mu, var;
  std::size_t row = 0;
  for (const auto& [c, n] : counts) {
    for (std::size_t i = 0; i < b; ++i)
      if (labels[i] == c) avg[row * b + i] = 1.0 / static_cast<double>(n);
    const ClassGaussian& pc = prior.at(c);
    src_mu.insert(src_mu.end(), pc.mu.begin(), pc.mu.end());
    var.insert(var.end(), pc.sigma2.begin(), pc.sigma2.end());
    ++row;
  }
  const Tensor class_means = tape.matmul(Tensor({g, b}, std::move(avg)), mu_t);
  const Tensor variances({g, m}, std::move(var));
  return relational_term(tape, class_means, variances, Tensor({g, m}, std::move(src_mu)), variances);
}

}  // namespace vbkt
