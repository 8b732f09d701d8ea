#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vbkt/data.hpp"
#include "vbkt/model.hpp"

namespace vbkt {

/// Diagonal Gaussian N(mu, diag(sigma2)) fitted to one class.
struct ClassGaussian {
  std::vector<double> mu;
  std::vector<double> sigma2;
  std::size_t count = 0;
};

/// Class-conditional priors over source-domain latent embeddings.
class ClassPrior {
 public:
  ClassPrior() = default;
  explicit ClassPrior(std::vector<ClassGaussian> classes);

  std::size_t num_classes() const { return classes_.size(); }
  std::size_t latent_dim() const { return classes_.empty() ? 0 : classes_.front().mu.size(); }
  /// Throws std::out_of_range for an unknown class.
  const ClassGaussian& at(std::size_t c) const;
  const std::vector<ClassGaussian>& classes() const { return classes_; }

  /// Copy whose variances are multiplied by `factor`.
  ClassPrior with_variance_scale(double factor) const;

 private:
  std::vector<ClassGaussian> classes_;
};

/// Per-class maximum-likelihood mean and 1/N diagonal variance of the rows
/// of `embeddings`, with variances floored at variance_floor.
ClassPrior fit_class_priors(const Tensor& embeddings, std::span<const std::size_t> labels,
                            std::size_t num_classes, double variance_floor = 1e-6);

/// Embeds `source_data` with the frozen source model (z = mu) and fits the priors.
ClassPrior fit_class_priors(const LatentSplitModel& source_model, const DomainDataset& source_data,
                            double variance_floor = 1e-6);

double prior_log_density(const ClassPrior& prior, std::size_t c, std::span<const double> z);

}  // namespace vbkt
