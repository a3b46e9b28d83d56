#pragma once

#include "skpn/tensor.hpp"

#include <functional>

namespace skpn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::int64_t checked = 0;
  bool passed = false;
};

// Compares backward() against central differences, one coordinate of
// `params` at a time. `f` must build a scalar loss from the leaf it is
// given. The relative error of a coordinate is
//   |analytic - numeric| / max(|analytic|, |numeric|, floor)
// so coordinates whose true derivative is ~0 are judged on absolute error.
// Throws std::runtime_error if two evaluations of `f` at the same point differ.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& params,
                           double eps = 1e-5, double tol = 1e-4, double floor = 1e-6);

}  // namespace skpn
