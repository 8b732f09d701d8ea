#include "vbkt/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "vbkt/rng.hpp"

namespace vbkt {

void ModelSpec::validate() const {
  if (input_dim == 0 || latent_dim == 0 || num_classes < 2) {
    throw std::invalid_argument("model spec needs input_dim > 0, latent_dim > 0, num_classes >= 2");
  }
  for (std::size_t w : theta_hidden)
    if (w == 0) throw std::invalid_argument("theta hidden widths must be positive");
  for (std::size_t w : omega_hidden)
    if (w == 0) throw std::invalid_argument("omega hidden widths must be positive");
}

namespace {

std::vector<std::size_t> theta_widths(const ModelSpec& s) {
  std::vector<std::size_t> w{s.input_dim};
  w.insert(w.end(), s.theta_hidden.begin(), s.theta_hidden.end());
  w.push_back(s.latent_dim);
  return w;
}

std::vector<std::size_t> omega_widths(const ModelSpec& s) {
  std::vector<std::size_t> w{s.latent_dim};
  w.insert(w.end(), s.omega_hidden.begin(), s.omega_hidden.end());
  w.push_back(s.num_classes);
  return w;
}

std::vector<AffineLayer> make_layers(const std::vector<std::size_t>& widths, CounterRng* rng) {
  std::vector<AffineLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    std::vector<double> w(in * out, 0.0);
    if (rng) {
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      for (double& v : w) v = rng->uniform(-bound, bound);
    }
    layers.push_back({Tensor({in, out}, std::move(w), true), Tensor::zeros({out}, true)});
  }
  return layers;
}

void check_layers(const std::vector<AffineLayer>& layers, const std::vector<std::size_t>& widths,
                  const char* which) {
  if (layers.size() + 1 != widths.size()) {
    throw ShapeError(std::string(which) + " layer count does not match the model spec");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.shape() != Shape{widths[l], widths[l + 1]} ||
        layers[l].bias.shape() != Shape{widths[l + 1]}) {
      throw ShapeError(std::string(which) + " layer " + std::to_string(l) + " has shape " +
                       shape_string(layers[l].weight.shape()));
    }
  }
}

Tensor run_stack(Tape& tape, const std::vector<AffineLayer>& layers, Tensor h) {
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = tape.add_bias(tape.matmul(h, layers[l].weight), layers[l].bias);
    if (l + 1 < layers.size()) h = tape.relu(h);
  }
  return h;
}

}  // namespace

LatentSplitModel::LatentSplitModel(ModelSpec spec, std::vector<AffineLayer> theta,
                                   std::vector<AffineLayer> omega)
    : spec_(std::move(spec)), theta_(std::move(theta)), omega_(std::move(omega)) {}

LatentSplitModel LatentSplitModel::random(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  CounterRng rng(RngKey{seed, 0x6d6f64656cULL, 0});
  auto theta = make_layers(theta_widths(spec), &rng);
  auto omega = make_layers(omega_widths(spec), &rng);
  return LatentSplitModel(spec, std::move(theta), std::move(omega));
}

LatentSplitModel LatentSplitModel::zeros(const ModelSpec& spec) {
  spec.validate();
  return LatentSplitModel(spec, make_layers(theta_widths(spec), nullptr),
                          make_layers(omega_widths(spec), nullptr));
}

LatentSplitModel LatentSplitModel::from_layers(const ModelSpec& spec, std::vector<AffineLayer> theta,
                                               std::vector<AffineLayer> omega) {
  spec.validate();
  check_layers(theta, theta_widths(spec), "theta");
  check_layers(omega, omega_widths(spec), "omega");
  return LatentSplitModel(spec, std::move(theta), std::move(omega));
}

Tensor LatentSplitModel::forward_latent(Tape& tape, const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != spec_.input_dim) {
    throw ShapeError("forward_latent expects (batch, " + std::to_string(spec_.input_dim) + "), got " +
                     shape_string(x.shape()));
  }
  return run_stack(tape, theta_, x);
}

Tensor LatentSplitModel::forward_logits(Tape& tape, const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != spec_.latent_dim) {
    throw ShapeError("forward_logits expects (batch, " + std::to_string(spec_.latent_dim) +
                     "), got " + shape_string(z.shape()));
  }
  return run_stack(tape, omega_, z);
}

Tensor sampling_sigma(const Tensor& sigma2, std::size_t batch, std::size_t latent_dim) {
  for (double v : sigma2.values()) {
    if (!(v > 0.0)) throw std::invalid_argument("latent variance must be strictly positive");
  }
  std::vector<double> sd(batch * latent_dim);
  const auto v = sigma2.values();
  if (sigma2.size() == 1) {
    std::fill(sd.begin(), sd.end(), std::sqrt(v[0]));
  } else if (sigma2.shape() == Shape{latent_dim}) {
    for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = std::sqrt(v[i % latent_dim]);
  } else if (sigma2.shape() == Shape{batch, latent_dim}) {
    for (std::size_t i = 0; i < sd.size(); ++i) sd[i] = std::sqrt(v[i]);
  } else {
    throw ShapeError("latent variance shape " + shape_string(sigma2.shape()) +
                     " fits neither (1), (M) nor (batch, M)");
  }
  return Tensor({batch, latent_dim}, std::move(sd));
}

TrainForward LatentSplitModel::forward_train(Tape& tape, const Tensor& x, const Tensor& sigma2) const {
  return forward_from_latent(tape, forward_latent(tape, x), sigma2);
}

TrainForward LatentSplitModel::forward_from_latent(Tape& tape, const Tensor& mu, const Tensor& sigma2) const {
  if (mu.rank() != 2 || mu.dim(1) != spec_.latent_dim) throw ShapeError("latent means " + shape_string(mu.shape()));
  const Tensor sigma = sampling_sigma(sigma2, mu.dim(0), spec_.latent_dim);
  Tensor z = tape.sample_gaussian(mu, sigma);
  Tensor logits = forward_logits(tape, z);
  return {{std::move(mu), sigma2, std::move(z)}, std::move(logits)};
}

Tensor LatentSplitModel::predict_latent(const Tensor& x) const {
  Tape tape = Tape::no_grad();
  return forward_latent(tape, x);
}

Tensor LatentSplitModel::predict_logits(const Tensor& x) const {
  Tape tape = Tape::no_grad();
  return forward_logits(tape, forward_latent(tape, x));
}

std::vector<Tensor> LatentSplitModel::parameters() const {
  std::vector<Tensor> out;
  for (const auto* stack : {&theta_, &omega_}) {
    for (const auto& layer : *stack) {
      out.push_back(layer.weight);
      out.push_back(layer.bias);
    }
  }
  return out;
}

std::vector<std::string> LatentSplitModel::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < theta_.size(); ++l) {
    names.push_back("theta." + std::to_string(l) + ".weight");
    names.push_back("theta." + std::to_string(l) + ".bias");
  }
  for (std::size_t l = 0; l < omega_.size(); ++l) {
    names.push_back("omega." + std::to_string(l) + ".weight");
    names.push_back("omega." + std::to_string(l) + ".bias");
  }
  return names;
}

void LatentSplitModel::set_parameter(std::size_t index, Tensor value) {
  const std::size_t n_theta = 2 * theta_.size();
  auto& stack = index < n_theta ? theta_ : omega_;
  const std::size_t local = index < n_theta ? index : index - n_theta;
  if (local / 2 >= stack.size()) throw std::out_of_range("parameter index out of range");
  AffineLayer& layer = stack[local / 2];
  Tensor& slot = local % 2 == 0 ? layer.weight : layer.bias;
  if (slot.shape() != value.shape()) {
    throw ShapeError("set_parameter shape " + shape_string(value.shape()) + " vs " +
                     shape_string(slot.shape()));
  }
  slot = std::move(value);
}

void LatentSplitModel::zero_grad() {
  for (Tensor& p : parameters()) p.zero_grad();
}

LatentSplitModel LatentSplitModel::clone() const {
  auto copy_stack = [](const std::vector<AffineLayer>& layers) {
    auto fresh = [](const Tensor& t) {
      return Tensor(t.shape(), {t.values().begin(), t.values().end()}, true);
    };
    std::vector<AffineLayer> out;
    for (const auto& l : layers) out.push_back({fresh(l.weight), fresh(l.bias)});
    return out;
  };
  return LatentSplitModel(spec_, copy_stack(theta_), copy_stack(omega_));
}

std::uint64_t LatentSplitModel::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : parameters()) {
    for (double v : p.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof v);
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace vbkt
