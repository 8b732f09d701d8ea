#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vbkt/tensor.hpp"

namespace vbkt {

/// Layer widths of a latent-split MLP:
///   x -> [affine, relu]* (theta_hidden) -> affine -> Z (latent_dim)
///   Z -> [affine, relu]* (omega_hidden) -> affine -> logits (num_classes)
/// Z is the pre-activation output of the last theta layer. Moving widths
/// between theta_hidden and omega_hidden moves the latent layer deeper or
/// shallower without changing the overall network.
struct ModelSpec {
  std::size_t input_dim = 20;
  std::vector<std::size_t> theta_hidden{64, 64};
  std::size_t latent_dim = 32;
  std::vector<std::size_t> omega_hidden{};
  std::size_t num_classes = 10;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct AffineLayer {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)
};

/// Per-sample latent Gaussians for a batch. sigma2 is shape (1) for a shared
/// scalar, (M) for a shared vector, or (batch, M) per row.
struct LatentBatch {
  Tensor mu;
  Tensor sigma2;
  Tensor z;
};

struct TrainForward {
  LatentBatch latent;
  Tensor logits;
};

class LatentSplitModel {
 public:
  LatentSplitModel() = default;

  /// He-uniform weights, zero biases; deterministic under seed.
  static LatentSplitModel random(const ModelSpec& spec, std::uint64_t seed);
  static LatentSplitModel zeros(const ModelSpec& spec);
  static LatentSplitModel from_layers(const ModelSpec& spec, std::vector<AffineLayer> theta,
                                      std::vector<AffineLayer> omega);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<AffineLayer>& theta_layers() const { return theta_; }
  const std::vector<AffineLayer>& omega_layers() const { return omega_; }

  /// Latent means mu = theta(x), shape (batch, M).
  Tensor forward_latent(Tape& tape, const Tensor& x) const;
  /// Logits omega(z), shape (batch, C).
  Tensor forward_logits(Tape& tape, const Tensor& z) const;
  /// Reparameterized pass: z = mu + sqrt(sigma2) * eps, logits from z.
  TrainForward forward_train(Tape& tape, const Tensor& x, const Tensor& sigma2) const;
  /// The same pass starting from given latent means.
  TrainForward forward_from_latent(Tape& tape, const Tensor& mu, const Tensor& sigma2) const;

  /// Inference-mode logits (z = mu), nothing recorded.
  Tensor predict_logits(const Tensor& x) const;
  Tensor predict_latent(const Tensor& x) const;

  /// Parameter handles in fixed order: theta weight/bias pairs, then omega.
  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  /// Replaces parameter i (same order as parameters()); shapes must match.
  void set_parameter(std::size_t index, Tensor value);
  void zero_grad();

  /// Deep copy with fresh storage; the copy's parameters require grad.
  LatentSplitModel clone() const;
  /// FNV-1a over the exact bytes of every parameter value.
  std::uint64_t fingerprint() const;

 private:
  LatentSplitModel(ModelSpec spec, std::vector<AffineLayer> theta, std::vector<AffineLayer> omega);

  ModelSpec spec_;
  std::vector<AffineLayer> theta_;
  std::vector<AffineLayer> omega_;
};

/// Builds the broadcast standard deviation for sampling from a variance tensor
/// of shape (1), (M) or (batch, M). Throws unless every entry is positive.
Tensor sampling_sigma(const Tensor& sigma2, std::size_t batch, std::size_t latent_dim);

}  // namespace vbkt
