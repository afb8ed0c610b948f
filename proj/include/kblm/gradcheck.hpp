#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "kblm/tensor.hpp"

namespace kblm {

struct GradCheckOptions {
  double step = 1e-6;
  // Denominator floor for the relative error, so coordinates whose true gradient
  // is ~0 are judged against finite-difference roundoff rather than themselves.
  double denominator_floor = 1e-2;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Central-difference check of `analytic` against `loss` at `point`, coordinate by
/// coordinate. `loss` receives the perturbed parameter vector.
template <class LossFn>
GradCheckReport gradient_check(LossFn&& loss, std::span<const double> point, std::span<const double> analytic,
                               double tolerance, GradCheckOptions opts = {}) {
  if (point.size() != analytic.size()) throw std::invalid_argument("gradient_check size mismatch");
  std::vector<double> x(point.begin(), point.end());
  auto eval = [&]() {
    const double v = loss(std::span<const double>(x));
    if (!std::isfinite(v)) throw NumericError("gradient_check: loss is not finite");
    return v;
  };
  eval();
  GradCheckReport r;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double saved = x[k];
    x[k] = saved + opts.step;
    const double up = eval();
    x[k] = saved - opts.step;
    const double down = eval();
    x[k] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double a = analytic[k];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), opts.denominator_floor});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > r.max_rel_error || r.checked == 0) {
      r.max_rel_error = rel;
      r.worst_index = k;
      r.analytic_at_worst = a;
      r.numeric_at_worst = numeric;
    }
    ++r.checked;
  }
  r.passed = r.max_rel_error <= tolerance;
  return r;
}

}  // namespace kblm
