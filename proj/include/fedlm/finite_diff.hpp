// SPDX-License-Identifier: Apache-2.0
/**
 * @file   finite_diff.hpp
 * @brief  Central-difference gradient oracle for tests.
 */
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedlm/error.hpp"

namespace fedlm {

/// (f(p + h e_i) - f(p - h e_i)) / 2h for every coordinate i.
template <class LossFn>
std::vector<double> finite_diff_grad(LossFn &&loss, std::span<const double> params,
                                     double h) {
  require(h > 0.0, "step must be positive");
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = loss(std::span<const double>(p));
    p[i] = orig - h;
    const double down = loss(std::span<const double>(p));
    p[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

} // namespace fedlm
