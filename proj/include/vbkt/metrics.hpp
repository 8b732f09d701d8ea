#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vbkt/data.hpp"
#include "vbkt/model.hpp"

namespace vbkt {

/// Argmax of one row, ties to the lowest index.
std::size_t argmax_row(const Tensor& logits, std::size_t row);

/// Inference-mode (z = mu) classification accuracy in [0, 1].
double accuracy(const LatentSplitModel& model, const DomainDataset& data);

/// Pairwise L2 distances between pre-softmax outputs of n samples of one class.
struct DiscrepancyMatrix {
  std::size_t class_id = 0;
  std::vector<std::size_t> sample_ids;
  std::vector<double> d;  // n x n, row-major

  std::size_t n() const { return sample_ids.size(); }
  double at(std::size_t i, std::size_t j) const { return d[i * n() + j]; }
  double mean_off_diagonal() const;
  /// Header "sample_id,<ids...>", then one row per sample.
  std::string to_csv() const;
};

DiscrepancyMatrix intra_class_discrepancy(const LatentSplitModel& model, const DomainDataset& data,
                                          std::size_t class_id, std::size_t n_samples, std::uint64_t seed);

/// Writes "domain_id,label,z0,...,z{M-1}" and one row per sample of every dataset.
void export_embeddings(const LatentSplitModel& model, const std::vector<const DomainDataset*>& datasets,
                       const std::filesystem::path& path);

struct EmbeddingRow {
  std::string domain_id;
  std::size_t label = 0;
  std::vector<double> z;
};

std::vector<EmbeddingRow> load_embeddings(const std::filesystem::path& path);

}  // namespace vbkt
