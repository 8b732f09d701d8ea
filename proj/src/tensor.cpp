#include "vbkt/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace vbkt {

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_finite(std::span<const double> values, OpKind kind, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite ") + what + " in " + std::string(to_string(kind)));
    }
  }
}

// Rows and columns of a rank-1 or rank-2 tensor viewed as a matrix whose last
// axis is the row.
std::pair<std::size_t, std::size_t> as_rows(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw ShapeError("expected rank 1 or 2, got " + shape_string(t.shape()));
}

Shape reduced_shape(const Tensor& a, int axis) {
  if (axis == -1) return {1};
  if (a.rank() != 2 || axis < 0 || axis > 1) {
    throw ShapeError("axis reduction needs a rank-2 tensor and axis in {0,1}, got axis " +
                     std::to_string(axis) + " on " + shape_string(a.shape()));
  }
  return {a.dim(axis == 0 ? 1 : 0)};
}

// Index of the reduced output that element i of `a` contributes to.
std::size_t reduced_index(const Tensor& a, int axis, std::size_t i) {
  if (axis == -1) return 0;
  const std::size_t cols = a.dim(1);
  return axis == 0 ? i % cols : i / cols;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

void axpy(double alpha, std::span<const double> x, std::span<double> dst) {
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] += alpha * x[i];
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : Tensor(Shape{1}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorStorage>()) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
  }
  if (product(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite tensor value");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a rank-2 tensor");
  return impl_->values.at(row * dim(1) + col);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  return impl_->values[0];
}

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->values, impl_->requires_grad);
  out.impl_->grad = impl_->grad;
  return out;
}

Tensor Tensor::detached() const { return Tensor(impl_->shape, impl_->values, false); }

std::vector<double>& Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

// ---------------------------------------------------------------------------
// Op names

namespace {
constexpr std::array<std::pair<OpKind, std::string_view>, 10> kOpNames{{
    {OpKind::matmul, "matmul"},
    {OpKind::add_bias, "add_bias"},
    {OpKind::relu, "relu"},
    {OpKind::softmax, "softmax"},
    {OpKind::log, "log"},
    {OpKind::square, "square"},
    {OpKind::sum, "sum"},
    {OpKind::mean, "mean"},
    {OpKind::huber, "huber"},
    {OpKind::sample_gaussian, "sample_gaussian"},
}};
}  // namespace

std::string_view to_string(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

OpKind op_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  throw std::invalid_argument("unknown op kind '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(std::uint64_t seed, std::uint64_t step) : seed_(seed), step_(step) {}

Tape Tape::no_grad(std::uint64_t seed, std::uint64_t step) {
  Tape tape(seed, step);
  tape.recording_ = false;
  return tape;
}

void Tape::check_live() const {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
}

Tensor Tape::finish(OpKind kind, Tensor out, std::initializer_list<const Tensor*> inputs,
                    BackwardFn backward) {
  require_finite(out.values(), kind, "output");
  const bool track =
      recording_ && std::any_of(inputs.begin(), inputs.end(),
                                [](const Tensor* t) { return t->requires_grad(); });
  if (!track) return out;
  out.impl_->requires_grad = true;
  nodes_.push_back(Node{kind, out, std::move(backward)});
  return out;
}

Tensor Tape::apply(OpKind kind, std::span<const Tensor> inputs, const OpParams& params) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      throw std::invalid_argument(std::string(to_string(kind)) + " takes " + std::to_string(lo) +
                                  (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                                  std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul:
      need(2, 2);
      return matmul(inputs[0], inputs[1]);
    case OpKind::add_bias:
      need(2, 2);
      return add_bias(inputs[0], inputs[1], params.alpha);
    case OpKind::relu:
      need(1, 1);
      return relu(inputs[0]);
    case OpKind::softmax:
      need(1, 1);
      return params.log_output ? log_softmax(inputs[0], params.temperature)
                               : softmax(inputs[0], params.temperature);
    case OpKind::log:
      need(1, 1);
      return log(inputs[0]);
    case OpKind::square:
      need(1, 1);
      return square(inputs[0]);
    case OpKind::sum:
      need(1, 2);
      return inputs.size() == 2 ? weighted_sum(inputs[0], inputs[1], params.axis, params.scale)
                                : sum(inputs[0], params.axis, params.scale);
    case OpKind::mean:
      need(1, 1);
      return mean(inputs[0], params.axis);
    case OpKind::huber:
      need(2, 2);
      return huber(inputs[0], inputs[1]);
    case OpKind::sample_gaussian:
      need(1, 2);
      return inputs.size() == 2 ? sample_gaussian(inputs[0], inputs[1])
                                : sample_gaussian(inputs[0], params.sigma);
  }
  throw std::invalid_argument("unknown op kind");
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_live();
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<double> out(n * m, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &bv[p * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return finish(OpKind::matmul, Tensor({n, m}, std::move(out)), {&a, &b},
                [a, b, n, k, m](std::span<const double> g) {
                  if (a.requires_grad()) {
                    auto& ga = a.grad_buffer();
                    const auto bv = b.values();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[p * m + j];
                        ga[i * k + p] += acc;
                      }
                  }
                  if (b.requires_grad()) {
                    auto& gb = b.grad_buffer();
                    const auto av = a.values();
                    for (std::size_t i = 0; i < n; ++i)
                      for (std::size_t p = 0; p < k; ++p) {
                        const double aip = av[i * k + p];
                        if (aip == 0.0) continue;
                        for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * g[i * m + j];
                      }
                  }
                });
}

Tensor Tape::add_bias(const Tensor& a, const Tensor& b, double alpha) {
  check_live();
  enum class Mode { same, row, scalar } mode;
  if (b.shape() == a.shape()) {
    mode = Mode::same;
  } else if (b.size() == 1) {
    mode = Mode::scalar;
  } else if (b.rank() == 1 && a.rank() == 2 && b.dim(0) == a.dim(1)) {
    mode = Mode::row;
  } else {
    throw ShapeError("add_bias " + shape_string(a.shape()) + " + " + shape_string(b.shape()));
  }
  const std::size_t cols = a.shape().back();
  auto b_index = [mode, cols](std::size_t i) -> std::size_t {
    switch (mode) {
      case Mode::same:
        return i;
      case Mode::row:
        return i % cols;
      case Mode::scalar:
        return 0;
    }
    return 0;
  };
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] + alpha * bv[b_index(i)];
  return finish(OpKind::add_bias, Tensor(a.shape(), std::move(out)), {&a, &b},
                [a, b, alpha, b_index](std::span<const double> g) {
                  if (a.requires_grad()) axpy(1.0, g, a.grad_buffer());
                  if (b.requires_grad()) {
                    auto& gb = b.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[b_index(i)] += alpha * g[i];
                  }
                });
}

Tensor Tape::relu(const Tensor& a) {
  check_live();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return finish(OpKind::relu, Tensor(a.shape(), std::move(out)), {&a},
                [a](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  const auto av = a.values();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (av[i] > 0.0) ga[i] += g[i];
                  }
                });
}

Tensor Tape::softmax(const Tensor& a, double temperature) {
  check_live();
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  const auto [rows, cols] = as_rows(a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * cols];
    double* y = &out[r * cols];
    double mx = x[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c] / temperature);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (y[c] = std::exp(x[c] / temperature - mx));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= z;
  }
  Tensor result(a.shape(), out);
  return finish(OpKind::softmax, result, {&a},
                [a, y = std::move(out), rows = rows, cols = cols,
                 temperature](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t i = r * cols + c;
                      ga[i] += y[i] * (g[i] - dot) / temperature;
                    }
                  }
                });
}

Tensor Tape::log_softmax(const Tensor& a, double temperature) {
  check_live();
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  const auto [rows, cols] = as_rows(a);
  const auto av = a.values();
  std::vector<double> out(av.size());
  std::vector<double> probs(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = &av[r * cols];
    double mx = x[0] / temperature;
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c] / temperature);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x[c] / temperature - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = x[c] / temperature - lse;
      probs[r * cols + c] = std::exp(out[r * cols + c]);
    }
  }
  return finish(OpKind::softmax, Tensor(a.shape(), std::move(out)), {&a},
                [a, probs = std::move(probs), rows = rows, cols = cols,
                 temperature](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double gsum = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) gsum += g[r * cols + c];
                    for (std::size_t c = 0; c < cols; ++c) {
                      const std::size_t i = r * cols + c;
                      ga[i] += (g[i] - probs[i] * gsum) / temperature;
                    }
                  }
                });
}

Tensor Tape::log(const Tensor& a) {
  check_live();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = std::log(v);
  return finish(OpKind::log, Tensor(a.shape(), std::move(out)), {&a},
                [a](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  const auto av = a.values();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
                });
}

Tensor Tape::square(const Tensor& a) {
  check_live();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v * v;
  return finish(OpKind::square, Tensor(a.shape(), std::move(out)), {&a},
                [a](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  const auto av = a.values();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
                });
}

Tensor Tape::sum(const Tensor& a, int axis, double scale) {
  check_live();
  const Shape out_shape = reduced_shape(a, axis);
  std::vector<double> out(out_shape[0], 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out[reduced_index(a, axis, i)] += av[i];
  for (double& v : out) v *= scale;
  return finish(OpKind::sum, Tensor(out_shape, std::move(out)), {&a},
                [a, axis, scale](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += scale * g[reduced_index(a, axis, i)];
                });
}

Tensor Tape::weighted_sum(const Tensor& a, const Tensor& weights, int axis, double scale) {
  check_live();
  if (weights.shape() != a.shape()) {
    throw ShapeError("sum weights " + shape_string(weights.shape()) + " vs " + shape_string(a.shape()));
  }
  const Shape out_shape = reduced_shape(a, axis);
  std::vector<double> out(out_shape[0], 0.0);
  const auto av = a.values();
  const auto wv = weights.values();
  for (std::size_t i = 0; i < av.size(); ++i) out[reduced_index(a, axis, i)] += wv[i] * av[i];
  for (double& v : out) v *= scale;
  return finish(OpKind::sum, Tensor(out_shape, std::move(out)), {&a, &weights},
                [a, weights, axis, scale](std::span<const double> g) {
                  const auto av = a.values();
                  const auto wv = weights.values();
                  if (a.requires_grad()) {
                    auto& ga = a.grad_buffer();
                    for (std::size_t i = 0; i < ga.size(); ++i)
                      ga[i] += scale * wv[i] * g[reduced_index(a, axis, i)];
                  }
                  if (weights.requires_grad()) {
                    auto& gw = weights.grad_buffer();
                    for (std::size_t i = 0; i < gw.size(); ++i)
                      gw[i] += scale * av[i] * g[reduced_index(a, axis, i)];
                  }
                });
}

Tensor Tape::mean(const Tensor& a, int axis) {
  check_live();
  const Shape out_shape = reduced_shape(a, axis);
  const std::size_t count = axis == -1 ? a.size() : a.dim(static_cast<std::size_t>(axis));
  const double scale = 1.0 / static_cast<double>(count);
  std::vector<double> out(out_shape[0], 0.0);
  const auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out[reduced_index(a, axis, i)] += av[i];
  for (double& v : out) v *= scale;
  return finish(OpKind::mean, Tensor(out_shape, std::move(out)), {&a},
                [a, axis, scale](std::span<const double> g) {
                  auto& ga = a.grad_buffer();
                  for (std::size_t i = 0; i < ga.size(); ++i)
                    ga[i] += scale * g[reduced_index(a, axis, i)];
                });
}

Tensor Tape::huber(const Tensor& x, const Tensor& y) {
  check_live();
  if (x.shape() != y.shape()) {
    throw ShapeError("huber " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  const auto xv = x.values();
  const auto yv = y.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = xv[i] - yv[i];
    out[i] = std::abs(d) <= 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  return finish(OpKind::huber, Tensor(x.shape(), std::move(out)), {&x, &y},
                [x, y](std::span<const double> g) {
                  const auto xv = x.values();
                  const auto yv = y.values();
                  std::vector<double> dd(g.size());
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    const double d = xv[i] - yv[i];
                    dd[i] = (std::abs(d) <= 1.0 ? d : (d > 0.0 ? 1.0 : -1.0)) * g[i];
                  }
                  if (x.requires_grad()) axpy(1.0, dd, x.grad_buffer());
                  if (y.requires_grad()) axpy(-1.0, dd, y.grad_buffer());
                });
}

Tensor Tape::sample_gaussian(const Tensor& mu, double sigma) {
  check_live();
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("sample_gaussian sigma must be finite and nonnegative");
  }
  const RngKey key{seed_, step_, stochastic_calls_++};
  const auto mv = mu.values();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv[i] + sigma * normal_at(key, i);
  return finish(OpKind::sample_gaussian, Tensor(mu.shape(), std::move(out)), {&mu},
                [mu](std::span<const double> g) { axpy(1.0, g, mu.grad_buffer()); });
}

Tensor Tape::sample_gaussian(const Tensor& mu, const Tensor& sigma) {
  check_live();
  if (sigma.size() == 1) {
    if (!sigma.requires_grad()) return sample_gaussian(mu, sigma.item());
  } else if (sigma.shape() != mu.shape()) {
    throw ShapeError("sample_gaussian sigma " + shape_string(sigma.shape()) + " vs mu " +
                     shape_string(mu.shape()));
  }
  for (double s : sigma.values()) {
    if (s < 0.0) throw std::invalid_argument("sample_gaussian sigma must be nonnegative");
  }
  const RngKey key{seed_, step_, stochastic_calls_++};
  const auto mv = mu.values();
  const auto sv = sigma.values();
  const bool shared = sigma.size() == 1;
  std::vector<double> eps(mv.size());
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    eps[i] = normal_at(key, i);
    out[i] = mv[i] + sv[shared ? 0 : i] * eps[i];
  }
  return finish(OpKind::sample_gaussian, Tensor(mu.shape(), std::move(out)), {&mu, &sigma},
                [mu, sigma, eps = std::move(eps), shared](std::span<const double> g) {
                  if (mu.requires_grad()) axpy(1.0, g, mu.grad_buffer());
                  if (sigma.requires_grad()) {
                    auto& gs = sigma.grad_buffer();
                    for (std::size_t i = 0; i < g.size(); ++i) gs[shared ? 0 : i] += g[i] * eps[i];
                  }
                });
}

void Tape::backward(const Tensor& output) {
  check_live();
  if (!output.is_scalar()) {
    throw ShapeError("backward() needs a scalar output, got " + shape_string(output.shape()));
  }
  if (!output.requires_grad()) {
    throw std::logic_error("backward() output does not depend on any tensor requiring grad");
  }
  Tensor out = output;
  out.grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    require_finite(it->output.grad(), it->kind, "gradient");
    it->backward(it->output.grad());
  }
  nodes_.clear();
  consumed_ = true;
}

}  // namespace vbkt
