// SPDX-License-Identifier: Apache-2.0
/**
 * @file   quantize.hpp
 * @brief  Per-tensor affine 8-bit weight quantization.
 *
 * Levels L in [0, 255] map to x = (L - zero_point) * scale, with
 * scale = (max - min) / 255 and zero_point = round(-min / scale). Levels are
 * stored as int8 (L - 128). The scale is kept as a float rounded upward so
 * the 256-level grid always spans [min, max], which bounds the round-trip
 * error by scale / 2.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "fedlm/cifg.hpp"

namespace fedlm {

struct QuantizedTensor {
  std::vector<std::int8_t> q;
  float scale = 1.0f;
  float zero_point = 0.0f;

  bool operator==(const QuantizedTensor &) const = default;
};

struct QuantizedModel {
  CifgConfig config;
  std::array<QuantizedTensor, num_tensors> tensors;

  bool operator==(const QuantizedModel &) const = default;
};

inline QuantizedTensor quantize_tensor(std::span<const double> xs) {
  QuantizedTensor out;
  out.q.assign(xs.size(), 0);
  if (xs.empty())
    return out;
  const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    // Constant tensor: every level is 128 (stored 0) and decodes to lo.
    out.scale = 1.0f;
    out.zero_point = static_cast<float>(128.0 - lo);
    return out;
  }
  const double exact = (hi - lo) / 255.0;
  float scale = static_cast<float>(exact);
  if (static_cast<double>(scale) < exact)
    scale = std::nextafter(scale, std::numeric_limits<float>::infinity());
  out.scale = scale;
  out.zero_point = static_cast<float>(std::round(-lo / static_cast<double>(scale)));
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const double level =
        std::clamp(std::round(xs[n] / scale) + out.zero_point, 0.0, 255.0);
    out.q[n] = static_cast<std::int8_t>(static_cast<int>(level) - 128);
  }
  return out;
}

inline double dequantize_value(const QuantizedTensor &t, std::int8_t q) {
  return (static_cast<double>(q) + 128.0 - static_cast<double>(t.zero_point)) *
         static_cast<double>(t.scale);
}

template <class T> QuantizedModel quantize(const CifgModel<T> &model) {
  require(all_finite(model.params()), "numeric overflow");
  QuantizedModel out{model.config(), {}};
  for (std::size_t t = 0; t < num_tensors; ++t) {
    const auto flat = model.tensor(static_cast<TensorId>(t)).flat();
    std::vector<double> xs(flat.begin(), flat.end());
    out.tensors[t] = quantize_tensor(xs);
  }
  return out;
}

template <class T> CifgModel<T> dequantize(const QuantizedModel &qm) {
  CifgModel<T> out(qm.config);
  for (std::size_t t = 0; t < num_tensors; ++t) {
    const auto &qt = qm.tensors[t];
    auto dst = out.tensor(static_cast<TensorId>(t)).flat();
    require(dst.size() == qt.q.size(), "quantized tensor size mismatch");
    for (std::size_t n = 0; n < dst.size(); ++n)
      dst[n] = static_cast<T>(dequantize_value(qt, qt.q[n]));
  }
  return out;
}

} // namespace fedlm
