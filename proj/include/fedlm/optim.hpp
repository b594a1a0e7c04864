// SPDX-License-Identifier: Apache-2.0
/**
 * @file   optim.hpp
 * @brief  Plain SGD and Nesterov momentum over flat parameter vectors.
 */
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedlm/error.hpp"

namespace fedlm {

enum class OptimizerKind { plain_sgd, nesterov };

template <class T> struct OptimizerState {
  OptimizerKind kind = OptimizerKind::nesterov;
  T lr = T(1);
  T momentum = T(0.9);
  std::vector<T> velocity;

  static OptimizerState nesterov(std::size_t n, T lr, T momentum) {
    require(momentum >= T(0) && momentum < T(1), "momentum must be in [0, 1)");
    return {OptimizerKind::nesterov, lr, momentum, std::vector<T>(n, T(0))};
  }
};

/// params -= lr * grads, in place.
template <class T>
void sgd_update(std::span<T> params, std::span<const T> grads, T lr) {
  require(params.size() == grads.size(), "shape mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i] -= lr * grads[i];
}

template <class T>
std::vector<T> sgd_step(std::span<const T> params, std::span<const T> grads,
                        T lr) {
  std::vector<T> out(params.begin(), params.end());
  sgd_update<T>(out, grads, lr);
  return out;
}

/// Nesterov momentum in the "applied" form:
///   v' = mu v + g;  params' = params - lr (mu v' + g)
/// With mu = 0 this performs exactly the arithmetic of sgd_update.
template <class T>
void nesterov_step(OptimizerState<T> &state, std::span<const T> grad,
                   std::span<T> params) {
  require(grad.size() == params.size() &&
              state.velocity.size() == params.size(),
          "shape mismatch");
  const T mu = state.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T v = mu * state.velocity[i] + grad[i];
    state.velocity[i] = v;
    params[i] -= state.lr * (mu * v + grad[i]);
  }
}

/// Rescales grads so their L2 norm is at most max_norm; max_norm <= 0 is a
/// no-op. Returns the pre-clip norm.
template <class T> double clip_global_norm(std::span<T> grads, double max_norm) {
  double sq = 0.0;
  for (T g : grads)
    sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (T &g : grads)
      g *= scale;
  }
  return norm;
}

} // namespace fedlm
