// SPDX-License-Identifier: Apache-2.0
/**
 * @file   predict.hpp
 * @brief  Candidate ranking shared by the neural and n-gram predictors.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "fedlm/corpus.hpp"

namespace fedlm {

struct Prediction {
  TokenId id = 0;
  double prob = 0.0;

  bool operator==(const Prediction &) const = default;
};

/// Top-k over non-special ids by descending probability, ties to the lower
/// id. With drop_zero, zero-probability words are never offered, so fewer
/// than k candidates may come back.
inline std::vector<Prediction> topk_masked(std::span<const double> probs,
                                           std::size_t k, bool drop_zero) {
  std::vector<TokenId> ids;
  ids.reserve(probs.size());
  for (TokenId id = num_special_tokens; id < probs.size(); ++id)
    if (!drop_zero || probs[id] > 0.0)
      ids.push_back(id);
  const std::size_t n = std::min(k, ids.size());
  auto better = [&](TokenId a, TokenId b) {
    return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n),
                    ids.end(), better);
  std::vector<Prediction> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({ids[i], probs[ids[i]]});
  return out;
}

/// Numerically stable softmax; the normalizer is accumulated in double.
template <class T>
std::vector<double> softmax(std::span<const T> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty())
    return p;
  const double mx = static_cast<double>(*std::max_element(logits.begin(), logits.end()));
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (auto &x : p)
    x /= sum;
  return p;
}

} // namespace fedlm
