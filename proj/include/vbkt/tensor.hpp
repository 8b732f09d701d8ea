#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vbkt/rng.hpp"

namespace vbkt {

using Shape = std::vector<std::size_t>;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& shape);

namespace detail {
struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a backward pass reaches it
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major float64 array. Copies share storage; use clone() for a
/// deep copy. Values are fixed after construction except through
/// mutable_values(), which the optimizer uses on leaf parameters.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->values.size(); }
  bool is_scalar() const { return size() == 1; }

  std::span<const double> values() const { return impl_->values; }
  std::span<double> mutable_values() { return impl_->values; }
  double operator[](std::size_t i) const { return impl_->values[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  Tensor detached() const;  // deep copy without gradient tracking
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  std::vector<double>& grad_buffer() const;  // gradients are side state shared by all handles
  std::shared_ptr<detail::TensorStorage> impl_;
};

enum class OpKind {
  matmul,
  add_bias,
  relu,
  softmax,
  log,
  square,
  sum,
  mean,
  huber,
  sample_gaussian,
};

std::string_view to_string(OpKind kind);
/// Throws std::invalid_argument for an unknown name.
OpKind op_kind_from_string(std::string_view name);

/// Scalar parameters shared by the op kinds; each op reads only its own.
struct OpParams {
  double alpha = 1.0;        // add_bias: a + alpha * b
  double scale = 1.0;        // sum / mean: result multiplier
  int axis = -1;             // sum / mean: -1 reduces everything
  double temperature = 1.0;  // softmax: softmax(a / temperature)
  bool log_output = false;   // softmax: return log-softmax instead
  double sigma = 0.0;        // sample_gaussian: scalar std when no sigma tensor is given
};

/// Records differentiable operations for one forward/backward pass.
///
/// Outputs require grad iff recording is on and some input requires grad;
/// only those ops produce a node. backward() walks the nodes in reverse
/// recording order once, accumulates into every reachable tensor that
/// requires grad, and consumes the tape. Leaf gradients are never reset by
/// the tape, so backward passes over separate tapes add up until zero_grad().
class Tape {
 public:
  explicit Tape(std::uint64_t seed = 0, std::uint64_t step = 0);

  /// A tape that never records; every output is a constant.
  static Tape no_grad(std::uint64_t seed = 0, std::uint64_t step = 0);

  /// Generic dispatch over the op set.
  Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpParams& params = {});

  // (n,k) x (k,m) -> (n,m)
  Tensor matmul(const Tensor& a, const Tensor& b);
  // a + alpha*b, where b has a's shape, shape (cols) for row-broadcast, or size 1.
  Tensor add_bias(const Tensor& a, const Tensor& b, double alpha = 1.0);
  Tensor relu(const Tensor& a);
  // Row-wise over the last axis.
  Tensor softmax(const Tensor& a, double temperature = 1.0);
  Tensor log_softmax(const Tensor& a, double temperature = 1.0);
  Tensor log(const Tensor& a);
  Tensor square(const Tensor& a);
  // scale * sum(a) over axis (-1: all). With weights: scale * sum(weights * a).
  Tensor sum(const Tensor& a, int axis = -1, double scale = 1.0);
  Tensor weighted_sum(const Tensor& a, const Tensor& weights, int axis = -1, double scale = 1.0);
  Tensor mean(const Tensor& a, int axis = -1);
  // Element-wise smoothed L1 between equal-shaped x and y.
  Tensor huber(const Tensor& x, const Tensor& y);
  // z = mu + sigma * eps with eps ~ N(0, 1) drawn from this tape's stream.
  Tensor sample_gaussian(const Tensor& mu, double sigma);
  Tensor sample_gaussian(const Tensor& mu, const Tensor& sigma);

  void backward(const Tensor& output);

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t step() const { return step_; }
  /// Number of sample_gaussian calls so far (recorded or not).
  std::uint64_t stochastic_calls() const { return stochastic_calls_; }

 private:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;
  struct Node {
    OpKind kind;
    Tensor output;
    BackwardFn backward;
  };

  Tensor finish(OpKind kind, Tensor out, std::initializer_list<const Tensor*> inputs,
                BackwardFn backward);
  void check_live() const;

  std::vector<Node> nodes_;
  std::uint64_t seed_;
  std::uint64_t step_;
  std::uint64_t stochastic_calls_ = 0;
  bool recording_ = true;
  bool consumed_ = false;
};

/// Adds `alpha * grad` into dst; used by the tape and by the optimizer.
void axpy(double alpha, std::span<const double> x, std::span<double> dst);

}  // namespace vbkt
