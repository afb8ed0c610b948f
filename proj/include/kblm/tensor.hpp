#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace kblm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a loss, gradient or activation stops being finite.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kLogFloor = 1e-300;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Max-subtracted softmax.
inline Vec softmax(const Vec& z) {
  if (z.size() == 0) return z;
  Vec p = (z.array() - z.maxCoeff()).exp();
  p /= p.sum();
  return p;
}

inline Vec log_softmax(const Vec& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

/// -ln p[target], with p[target] floored at 1e-300.
inline double cross_entropy(const Vec& p, Eigen::Index target) {
  if (target < 0 || target >= p.size()) throw std::out_of_range("cross_entropy target out of range");
  return -std::log(std::max(p[target], kLogFloor));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log(sum(exp(v))) over a plain range of log values.
template <class Range>
double log_sum_exp(const Range& values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace kblm
