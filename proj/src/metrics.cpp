#include "vbkt/metrics.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vbkt/io.hpp"
#include "vbkt/rng.hpp"

namespace vbkt {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  const auto v = logits.values().subspan(row * c, c);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

double accuracy(const LatentSplitModel& model, const DomainDataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy on an empty dataset");
  const Tensor logits = model.predict_logits(data.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += argmax_row(logits, i) == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double DiscrepancyMatrix::mean_off_diagonal() const {
  const std::size_t k = n();
  if (k < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) s += at(i, j);
  return s / static_cast<double>(k * (k - 1));
}

std::string DiscrepancyMatrix::to_csv() const {
  std::ostringstream os;
  os << "sample_id";
  for (std::size_t id : sample_ids) os << ',' << id;
  os << '\n';
  for (std::size_t i = 0; i < n(); ++i) {
    os << sample_ids[i];
    for (std::size_t j = 0; j < n(); ++j) os << ',' << format_double(at(i, j));
    os << '\n';
  }
  return os.str();
}

DiscrepancyMatrix intra_class_discrepancy(const LatentSplitModel& model, const DomainDataset& data,
                                          std::size_t class_id, std::size_t n_samples, std::uint64_t seed) {
  std::vector<std::size_t> members = data.class_members(class_id);
  if (n_samples == 0 || members.size() < n_samples) {
    throw std::invalid_argument("class " + std::to_string(class_id) + " has " + std::to_string(members.size()) +
                                " members, need " + std::to_string(n_samples));
  }
  CounterRng rng(RngKey{seed, 0x64697363ULL, class_id});
  for (std::size_t i = 0; i < n_samples; ++i) {
    const std::size_t j = i + rng.below(members.size() - i);
    std::swap(members[i], members[j]);
  }
  members.resize(n_samples);

  const Tensor logits = model.predict_logits(data.rows(members));
  const std::size_t c = logits.dim(1);
  const auto lv = logits.values();
  DiscrepancyMatrix out{class_id, members, std::vector<double>(n_samples * n_samples, 0.0)};
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t j = i + 1; j < n_samples; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double diff = lv[i * c + k] - lv[j * c + k];
        s += diff * diff;
      }
      out.d[i * n_samples + j] = out.d[j * n_samples + i] = std::sqrt(s);
    }
  }
  return out;
}

void export_embeddings(const LatentSplitModel& model, const std::vector<const DomainDataset*>& datasets,
                       const std::filesystem::path& path) {
  const std::size_t m = model.spec().latent_dim;
  std::ostringstream os;
  os << "domain_id,label";
  for (std::size_t j = 0; j < m; ++j) os << ",z" << j;
  os << '\n';
  for (const DomainDataset* data : datasets) {
    if (data->size() == 0) continue;
    const Tensor z = model.predict_latent(data->x);
    const auto zv = z.values();
    for (std::size_t i = 0; i < data->size(); ++i) {
      os << data->domain_id << ',' << data->labels[i];
      for (std::size_t j = 0; j < m; ++j) os << ',' << format_double(zv[i * m + j]);
      os << '\n';
    }
  }
  write_file_atomic(path, os.str());
}

std::vector<EmbeddingRow> load_embeddings(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("domain_id,label", 0) != 0) {
    throw std::runtime_error(path.string() + ": missing embedding header");
  }
  const std::size_t width = split(line, ',').size();
  std::vector<EmbeddingRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != width) throw std::runtime_error(path.string() + ": ragged embedding row");
    EmbeddingRow r{std::string(f[0]), parse_size(f[1]), {}};
    for (std::size_t j = 2; j < f.size(); ++j) r.z.push_back(parse_double(f[j]));
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace vbkt
