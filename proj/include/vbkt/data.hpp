#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vbkt/tensor.hpp"

namespace vbkt {

/// Labeled samples of one domain. When pair_index is set, sample i is the
/// parallel twin of sample pair_index[i] in a sister dataset.
struct DomainDataset {
  Tensor x;  // (N, input_dim)
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string domain_id;
  std::optional<std::vector<std::size_t>> pair_index;

  std::size_t size() const { return labels.size(); }
  std::size_t input_dim() const { return x.dim(1); }
  bool paired() const { return pair_index.has_value(); }

  /// Rows of x at the given indices, as a (k, input_dim) tensor.
  Tensor rows(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> labels_at(std::span<const std::size_t> indices) const;
  /// Indices of every sample with label c, in dataset order.
  std::vector<std::size_t> class_members(std::size_t c) const;

  /// Checks labels < C and x/labels/pair_index sizes agree.
  void validate() const;
};

/// Class-cluster geometry shared by every split drawn from one benchmark.
/// Features are mean[c] + spread * N(0, I).
struct ClusterLayout {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  std::vector<double> means;  // (C, input_dim) row-major
  double spread = 1.0;

  std::span<const double> mean(std::size_t c) const {
    return std::span<const double>(means).subspan(c * input_dim, input_dim);
  }
};

struct SourceOptions {
  double separation = 3.0;  // norm of each class mean
  double spread = 1.0;
};

ClusterLayout make_layout(std::size_t num_classes, std::size_t input_dim, std::uint64_t seed,
                          const SourceOptions& options = {});

/// n samples, labels cycling 0..C-1 then shuffled, so class counts differ by at most one.
DomainDataset sample_domain(const ClusterLayout& layout, std::size_t n_samples, std::uint64_t seed,
                            std::string domain_id);

DomainDataset generate_source(std::size_t n_samples, std::size_t num_classes, std::size_t input_dim,
                              std::uint64_t seed, const SourceOptions& options = {});

enum class ShiftKind { affine_channel, additive_noise };

std::string_view to_string(ShiftKind kind);
ShiftKind shift_kind_from_string(std::string_view name);

/// Domain shift. affine_channel maps x -> A x + b (device analogue).
/// additive_noise adds colored Gaussian noise whose per-element mean square is
/// one of noise_levels, picked per sample (noise-condition analogue).
struct ShiftSpec {
  ShiftKind kind = ShiftKind::affine_channel;
  std::size_t dim = 0;
  std::vector<double> matrix;  // affine: (dim, dim); noise: colouring factor (dim, dim)
  std::vector<double> bias;    // affine only
  std::vector<double> noise_levels;
  std::uint64_t seed = 0;

  static ShiftSpec identity(std::size_t dim);
  /// A = I + strength * R / sqrt(dim), b = bias_scale * N(0, I); redrawn until well conditioned.
  static ShiftSpec random_affine(std::size_t dim, double strength, double bias_scale,
                                 std::uint64_t seed);
  /// Colouring factor L = I + colour * R / sqrt(dim), rescaled so trace(L L^T) = dim.
  static ShiftSpec colored_noise(std::size_t dim, std::vector<double> levels, double colour,
                                 std::uint64_t seed);

  /// Throws std::invalid_argument if the affine map is not invertible or a noise level is not positive.
  void validate() const;
  /// Inverse affine map; affine_channel only.
  ShiftSpec inverse() const;
};

/// Applies the shift to every row. `stream` keys the noise draws.
Tensor apply_shift(const ShiftSpec& spec, const Tensor& x, std::uint64_t stream = 0);

struct DeriveOptions {
  double max_fraction = 0.1;  // n_target <= max_fraction * N_S
};

/// parallel=true: shifted copies of n_target distinct source samples, with
/// pair_index pointing back at them. parallel=false: fresh draws from the
/// layout, then shifted; no pairing.
DomainDataset derive_target(const DomainDataset& source, const ClusterLayout& layout,
                            const ShiftSpec& spec, std::size_t n_target, bool parallel,
                            std::uint64_t seed, std::string domain_id = "target",
                            const DeriveOptions& options = {});

/// n_aug jittered copies x + strength * N(0, I).
std::vector<Tensor> augment(const Tensor& x, std::size_t n_aug, double strength, std::uint64_t seed);

// Delimited-text persistence. Layout:
//   n,input_dim,num_classes,domain_id,paired
//   <values of the above>
//   label[,pair],x0,...,x{d-1}     (one row per sample)
// Features are written in shortest round-trip form, so load(save(d)) == d.
void save_dataset(const DomainDataset& data, const std::filesystem::path& path);
DomainDataset load_dataset(const std::filesystem::path& path);

}  // namespace vbkt
