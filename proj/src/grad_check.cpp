#include "vbkt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vbkt {

GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double fd_step, double tol,
                           std::uint64_t seed) {
  if (!(fd_step > 0.0)) throw std::invalid_argument("grad_check fd_step must be positive");

  GradCheckReport report;
  {
    Tensor x(point.shape(), std::vector<double>(point.values().begin(), point.values().end()), true);
    Tape tape(seed);
    const Tensor y = f(tape, x);
    if (y.requires_grad()) tape.backward(y);
    if (x.has_grad()) {
      report.analytic.assign(x.grad().begin(), x.grad().end());
    } else {
      report.analytic.assign(x.size(), 0.0);  // f does not depend on x
    }
  }

  auto evaluate = [&](std::vector<double> values) {
    Tape tape = Tape::no_grad(seed);
    const Tensor y = f(tape, Tensor(point.shape(), std::move(values)));
    const double v = y.item();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  const std::vector<double> base(point.values().begin(), point.values().end());
  report.numeric.resize(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base;
    std::vector<double> minus = base;
    plus[i] += fd_step;
    minus[i] -= fd_step;
    report.numeric[i] = (evaluate(std::move(plus)) - evaluate(std::move(minus))) / (2.0 * fd_step);
  }

  for (std::size_t i = 0; i < base.size(); ++i) {
    const double a = report.analytic[i];
    const double n = report.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    report.max_rel_error = std::max(report.max_rel_error, std::abs(a - n) / denom);
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace vbkt
