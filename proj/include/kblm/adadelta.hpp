#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace kblm {

/// Running averages for AdaDelta (Zeiler 2012): squared gradients and squared updates.
struct AdaDeltaState {
  std::vector<double> sq_grad;
  std::vector<double> sq_update;
  double rho = 0.95;
  double epsilon = 1e-6;

  AdaDeltaState() = default;
  AdaDeltaState(std::size_t n, double rho_, double epsilon_)
      : sq_grad(n, 0.0), sq_update(n, 0.0), rho(rho_), epsilon(epsilon_) {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("AdaDelta rho must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw std::invalid_argument("AdaDelta epsilon must be positive");
  }
};

inline void adadelta_update(std::span<double> param, std::span<const double> grad, AdaDeltaState& s) {
  if (param.size() != grad.size() || param.size() != s.sq_grad.size())
    throw std::invalid_argument("adadelta_update shape mismatch");
  const double rho = s.rho, eps = s.epsilon;
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    s.sq_grad[k] = rho * s.sq_grad[k] + (1.0 - rho) * g * g;
    const double delta = -std::sqrt(s.sq_update[k] + eps) / std::sqrt(s.sq_grad[k] + eps) * g;
    s.sq_update[k] = rho * s.sq_update[k] + (1.0 - rho) * delta * delta;
    param[k] += delta;
  }
}

}  // namespace kblm
