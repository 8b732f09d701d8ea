#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "vbkt/tensor.hpp"

namespace vbkt {

/// Scalar-valued function of one tensor. It must draw any randomness from
/// the tape it is given so repeated evaluations see the same noise.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  bool pass = false;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Compares the reverse-mode gradient of f at `point` with central
/// differences. Relative error per element is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const ScalarFn& f, const Tensor& point, double fd_step, double tol,
                           std::uint64_t seed = 0);

}  // namespace vbkt
