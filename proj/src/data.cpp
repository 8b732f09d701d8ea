#include "vbkt/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vbkt/io.hpp"
#include "vbkt/rng.hpp"

namespace vbkt {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint64_t kLayoutStream = 0x6c61796f7574ULL;
constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;
constexpr std::uint64_t kShiftStream = 0x7368696674ULL;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;
constexpr std::uint64_t kPickStream = 0x7069636bULL;
constexpr std::uint64_t kAugmentStream = 0x61756780ULL;

Eigen::Map<const RowMatrix> as_matrix(const std::vector<double>& v, std::size_t dim) {
  return Eigen::Map<const RowMatrix>(v.data(), static_cast<Eigen::Index>(dim),
                                     static_cast<Eigen::Index>(dim));
}

// Fisher-Yates driven by the counter generator.
template <typename T>
void shuffle(std::vector<T>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<double> random_mixing(std::size_t dim, double strength, CounterRng& rng) {
  std::vector<double> m(dim * dim, 0.0);
  const double scale = strength / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) m[i * dim + j] = (i == j ? 1.0 : 0.0) + scale * rng.normal();
  }
  return m;
}

double condition_number(const std::vector<double>& m, std::size_t dim) {
  Eigen::JacobiSVD<RowMatrix> svd(as_matrix(m, dim));
  const auto& s = svd.singularValues();
  return s(0) / s(s.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// DomainDataset

Tensor DomainDataset::rows(std::span<const std::size_t> indices) const {
  const std::size_t d = input_dim();
  std::vector<double> out;
  out.reserve(indices.size() * d);
  const auto xv = x.values();
  for (std::size_t i : indices) {
    if (i >= size()) throw std::out_of_range("dataset row index out of range");
    out.insert(out.end(), xv.begin() + static_cast<std::ptrdiff_t>(i * d),
               xv.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  }
  return Tensor({indices.size(), d}, std::move(out));
}

std::vector<std::size_t> DomainDataset::labels_at(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

std::vector<std::size_t> DomainDataset::class_members(std::size_t c) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == c) out.push_back(i);
  return out;
}

void DomainDataset::validate() const {
  if (x.rank() != 2 || x.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset x rows do not match label count");
  }
  for (std::size_t y : labels) {
    if (y >= num_classes) throw std::invalid_argument("dataset label out of range");
  }
  if (pair_index && pair_index->size() != labels.size()) {
    throw std::invalid_argument("dataset pair_index size does not match sample count");
  }
}

// ---------------------------------------------------------------------------
// Generation

ClusterLayout make_layout(std::size_t num_classes, std::size_t input_dim, std::uint64_t seed,
                          const SourceOptions& options) {
  if (num_classes < 2 || input_dim == 0) throw std::invalid_argument("layout needs C >= 2 and input_dim > 0");
  if (!(options.spread > 0.0) || options.separation < 0.0) {
    throw std::invalid_argument("layout needs spread > 0 and separation >= 0");
  }
  CounterRng rng(RngKey{seed, kLayoutStream, 0});
  ClusterLayout layout{num_classes, input_dim, std::vector<double>(num_classes * input_dim), options.spread};
  for (std::size_t c = 0; c < num_classes; ++c) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < input_dim; ++j) {
      const double v = rng.normal();
      layout.means[c * input_dim + j] = v;
      norm2 += v * v;
    }
    const double k = options.separation / std::sqrt(norm2);
    for (std::size_t j = 0; j < input_dim; ++j) layout.means[c * input_dim + j] *= k;
  }
  return layout;
}

DomainDataset sample_domain(const ClusterLayout& layout, std::size_t n_samples, std::uint64_t seed,
                            std::string domain_id) {
  if (n_samples < 2 * layout.num_classes) {
    throw std::invalid_argument("need at least two samples per class");
  }
  CounterRng rng(RngKey{seed, kSampleStream, 0});
  std::vector<std::size_t> labels(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) labels[i] = i % layout.num_classes;
  shuffle(labels, rng);

  const std::size_t d = layout.input_dim;
  std::vector<double> x(n_samples * d);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const auto m = layout.mean(labels[i]);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = m[j] + layout.spread * rng.normal();
  }
  return DomainDataset{Tensor({n_samples, d}, std::move(x)), std::move(labels), layout.num_classes,
                       std::move(domain_id), std::nullopt};
}

DomainDataset generate_source(std::size_t n_samples, std::size_t num_classes, std::size_t input_dim,
                              std::uint64_t seed, const SourceOptions& options) {
  return sample_domain(make_layout(num_classes, input_dim, seed, options), n_samples, seed, "source");
}

// ---------------------------------------------------------------------------
// Shifts

std::string_view to_string(ShiftKind kind) {
  return kind == ShiftKind::affine_channel ? "affine_channel" : "additive_noise";
}

ShiftKind shift_kind_from_string(std::string_view name) {
  if (name == "affine_channel") return ShiftKind::affine_channel;
  if (name == "additive_noise") return ShiftKind::additive_noise;
  throw std::invalid_argument("unknown shift kind '" + std::string(name) + "'");
}

ShiftSpec ShiftSpec::identity(std::size_t dim) {
  ShiftSpec s;
  s.kind = ShiftKind::affine_channel;
  s.dim = dim;
  s.matrix.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) s.matrix[i * dim + i] = 1.0;
  s.bias.assign(dim, 0.0);
  return s;
}

ShiftSpec ShiftSpec::random_affine(std::size_t dim, double strength, double bias_scale,
                                   std::uint64_t seed) {
  CounterRng rng(RngKey{seed, kShiftStream, 0});
  ShiftSpec s;
  s.kind = ShiftKind::affine_channel;
  s.dim = dim;
  s.seed = seed;
  do {
    s.matrix = random_mixing(dim, strength, rng);
  } while (condition_number(s.matrix, dim) > 1e3);
  s.bias.resize(dim);
  for (double& b : s.bias) b = bias_scale * rng.normal();
  return s;
}

ShiftSpec ShiftSpec::colored_noise(std::size_t dim, std::vector<double> levels, double colour,
                                   std::uint64_t seed) {
  CounterRng rng(RngKey{seed, kShiftStream, 1});
  ShiftSpec s;
  s.kind = ShiftKind::additive_noise;
  s.dim = dim;
  s.seed = seed;
  s.matrix = random_mixing(dim, colour, rng);
  double frob2 = 0.0;
  for (double v : s.matrix) frob2 += v * v;
  const double k = std::sqrt(static_cast<double>(dim) / frob2);
  for (double& v : s.matrix) v *= k;
  s.noise_levels = std::move(levels);
  s.validate();
  return s;
}

void ShiftSpec::validate() const {
  if (dim == 0 || matrix.size() != dim * dim) throw std::invalid_argument("shift matrix must be dim x dim");
  if (kind == ShiftKind::affine_channel) {
    if (bias.size() != dim) throw std::invalid_argument("affine shift bias must have dim entries");
    Eigen::FullPivLU<RowMatrix> lu(as_matrix(matrix, dim));
    if (!lu.isInvertible()) throw std::invalid_argument("affine shift matrix is not invertible");
  } else {
    if (noise_levels.empty()) throw std::invalid_argument("noise shift needs at least one level");
    for (double v : noise_levels)
      if (!(v > 0.0)) throw std::invalid_argument("noise levels must be positive");
  }
}

ShiftSpec ShiftSpec::inverse() const {
  if (kind != ShiftKind::affine_channel) throw std::logic_error("only affine shifts have an inverse");
  validate();
  const RowMatrix inv = as_matrix(matrix, dim).inverse();
  Eigen::Map<const Eigen::VectorXd> b(bias.data(), static_cast<Eigen::Index>(dim));
  const Eigen::VectorXd inv_b = -(inv * b);
  ShiftSpec out = *this;
  out.matrix.assign(inv.data(), inv.data() + inv.size());
  out.bias.assign(inv_b.data(), inv_b.data() + inv_b.size());
  return out;
}

Tensor apply_shift(const ShiftSpec& spec, const Tensor& x, std::uint64_t stream) {
  if (x.rank() != 2 || x.dim(1) != spec.dim) {
    throw ShapeError("shift of dim " + std::to_string(spec.dim) + " applied to " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), d = spec.dim;
  const auto xv = x.values();
  std::vector<double> out(n * d);
  if (spec.kind == ShiftKind::affine_channel) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        double acc = spec.bias[r];
        for (std::size_t c = 0; c < d; ++c) acc += spec.matrix[r * d + c] * xv[i * d + c];
        out[i * d + r] = acc;
      }
    }
  } else {
    std::vector<double> eps(d);
    for (std::size_t i = 0; i < n; ++i) {
      CounterRng rng(RngKey{spec.seed, hash_combine(kNoiseStream, stream), i});
      const double level = spec.noise_levels[rng.below(spec.noise_levels.size())];
      const double amp = std::sqrt(level);
      for (double& e : eps) e = rng.normal();
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += spec.matrix[r * d + c] * eps[c];
        out[i * d + r] = xv[i * d + r] + amp * acc;
      }
    }
  }
  return Tensor({n, d}, std::move(out));
}

DomainDataset derive_target(const DomainDataset& source, const ClusterLayout& layout,
                            const ShiftSpec& spec, std::size_t n_target, bool parallel,
                            std::uint64_t seed, std::string domain_id, const DeriveOptions& options) {
  spec.validate();
  if (n_target == 0 || static_cast<double>(n_target) > options.max_fraction * static_cast<double>(source.size())) {
    throw std::invalid_argument("n_target " + std::to_string(n_target) + " exceeds " +
                                format_double(options.max_fraction) + " of the source size");
  }
  if (spec.dim != source.input_dim() || layout.input_dim != source.input_dim()) {
    throw std::invalid_argument("shift/layout dimension does not match the source dataset");
  }
  if (!parallel) {
    DomainDataset fresh = sample_domain(layout, n_target, hash_combine(seed, kPickStream), domain_id);
    fresh.x = apply_shift(spec, fresh.x, seed);
    return fresh;
  }
  CounterRng rng(RngKey{seed, kPickStream, 1});
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n_target entries are a uniform draw without replacement.
  for (std::size_t i = 0; i < n_target; ++i) {
    const std::size_t j = i + rng.below(order.size() - i);
    std::swap(order[i], order[j]);
  }
  order.resize(n_target);
  DomainDataset out;
  out.x = apply_shift(spec, source.rows(order), seed);
  out.labels = source.labels_at(order);
  out.num_classes = source.num_classes;
  out.domain_id = std::move(domain_id);
  out.pair_index = std::move(order);
  return out;
}

std::vector<Tensor> augment(const Tensor& x, std::size_t n_aug, double strength, std::uint64_t seed) {
  if (n_aug < 2) throw std::invalid_argument("augment needs n_aug >= 2");
  if (!(strength >= 0.0)) throw std::invalid_argument("augment strength must be nonnegative");
  std::vector<Tensor> copies;
  copies.reserve(n_aug);
  const auto xv = x.values();
  for (std::size_t k = 0; k < n_aug; ++k) {
    CounterRng rng(RngKey{seed, kAugmentStream, k});
    std::vector<double> v(xv.begin(), xv.end());
    for (double& e : v) e += strength * rng.normal();
    copies.emplace_back(x.shape(), std::move(v));
  }
  return copies;
}

// ---------------------------------------------------------------------------
// Persistence

void save_dataset(const DomainDataset& data, const std::filesystem::path& path) {
  data.validate();
  if (data.domain_id.find_first_of(",\n") != std::string::npos) {
    throw std::invalid_argument("domain_id may not contain ',' or newlines");
  }
  std::ostringstream os;
  const std::size_t d = data.input_dim();
  os << "n,input_dim,num_classes,domain_id,paired\n";
  os << data.size() << ',' << d << ',' << data.num_classes << ',' << data.domain_id << ','
     << (data.paired() ? 1 : 0) << '\n';
  const auto xv = data.x.values();
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << data.labels[i];
    if (data.paired()) os << ',' << (*data.pair_index)[i];
    for (std::size_t j = 0; j < d; ++j) os << ',' << format_double(xv[i * d + j]);
    os << '\n';
  }
  write_file_atomic(path, os.str());
}

DomainDataset load_dataset(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  auto fail = [&](const std::string& why) -> std::runtime_error {
    return std::runtime_error(path.string() + ": " + why);
  };
  if (!std::getline(in, line) || line != "n,input_dim,num_classes,domain_id,paired") {
    throw fail("missing dataset header");
  }
  if (!std::getline(in, line)) throw fail("missing dataset header values");
  const auto head = split(line, ',');
  if (head.size() != 5) throw fail("malformed header values");
  const std::size_t n = parse_size(head[0]);
  const std::size_t d = parse_size(head[1]);
  DomainDataset out;
  out.num_classes = parse_size(head[2]);
  out.domain_id = std::string(head[3]);
  const bool paired = parse_size(head[4]) == 1;
  std::vector<double> x;
  x.reserve(n * d);
  std::vector<std::size_t> pairs;
  const std::size_t offset = paired ? 2 : 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != offset + d) throw fail("row " + std::to_string(out.labels.size()) + " has wrong width");
    out.labels.push_back(parse_size(fields[0]));
    if (paired) pairs.push_back(parse_size(fields[1]));
    for (std::size_t j = 0; j < d; ++j) x.push_back(parse_double(fields[offset + j]));
  }
  if (out.labels.size() != n) throw fail("expected " + std::to_string(n) + " rows");
  out.x = Tensor({n, d}, std::move(x));
  if (paired) out.pair_index = std::move(pairs);
  out.validate();
  return out;
}

}  // namespace vbkt
