#include "vbkt/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vbkt {

ClassPrior::ClassPrior(std::vector<ClassGaussian> classes) : classes_(std::move(classes)) {
  for (const auto& g : classes_) {
    if (g.mu.size() != latent_dim() || g.sigma2.size() != latent_dim()) {
      throw std::invalid_argument("class priors must share one latent dimension");
    }
    for (double v : g.sigma2)
      if (!(v > 0.0)) throw std::invalid_argument("prior variances must be positive");
  }
}

const ClassGaussian& ClassPrior::at(std::size_t c) const {
  if (c >= classes_.size()) {
    throw std::out_of_range("no prior for class " + std::to_string(c));
  }
  return classes_[c];
}

ClassPrior ClassPrior::with_variance_scale(double factor) const {
  if (!(factor > 0.0)) throw std::invalid_argument("variance scale must be positive");
  ClassPrior out = *this;
  for (auto& g : out.classes_)
    for (double& v : g.sigma2) v *= factor;
  return out;
}

ClassPrior fit_class_priors(const Tensor& embeddings, std::span<const std::size_t> labels,
                            std::size_t num_classes, double variance_floor) {
  if (!(variance_floor > 0.0)) throw std::invalid_argument("variance_floor must be positive");
  if (labels.empty()) throw std::invalid_argument("cannot fit priors on an empty dataset");
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ShapeError("embeddings rows do not match labels");
  }
  const std::size_t m = embeddings.dim(1);
  const auto z = embeddings.values();

  // Welford updates per class.
  std::vector<ClassGaussian> classes(num_classes, ClassGaussian{std::vector<double>(m, 0.0),
                                                                std::vector<double>(m, 0.0), 0});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw std::out_of_range("label out of range while fitting priors");
    ClassGaussian& g = classes[labels[i]];
    ++g.count;
    const double n = static_cast<double>(g.count);
    for (std::size_t j = 0; j < m; ++j) {
      const double delta = z[i * m + j] - g.mu[j];
      g.mu[j] += delta / n;
      g.sigma2[j] += delta * (z[i * m + j] - g.mu[j]);
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassGaussian& g = classes[c];
    if (g.count < 2) {
      throw std::invalid_argument("class " + std::to_string(c) + " has fewer than 2 source samples");
    }
    for (double& v : g.sigma2) v = std::max(v / static_cast<double>(g.count), variance_floor);
  }
  return ClassPrior(std::move(classes));
}

ClassPrior fit_class_priors(const LatentSplitModel& source_model, const DomainDataset& source_data,
                            double variance_floor) {
  if (source_data.size() == 0) throw std::invalid_argument("cannot fit priors on an empty dataset");
  return fit_class_priors(source_model.predict_latent(source_data.x), source_data.labels,
                          source_data.num_classes, variance_floor);
}

double prior_log_density(const ClassPrior& prior, std::size_t c, std::span<const double> z) {
  const ClassGaussian& g = prior.at(c);
  if (z.size() != g.mu.size()) throw ShapeError("prior_log_density: dimension mismatch");
  double lp = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double d = z[j] - g.mu[j];
    lp -= 0.5 * (std::log(2.0 * std::numbers::pi * g.sigma2[j]) + d * d / g.sigma2[j]);
  }
  return lp;
}

}  // namespace vbkt
