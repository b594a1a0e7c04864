// SPDX-License-Identifier: Apache-2.0
/**
 * @file   ngram.hpp
 * @brief  Absolute-discounting backoff n-gram model used as the prediction
 *         baseline.
 *
 *   P(w | ctx) = max(c(ctx, w) - d, 0) / c(ctx) + lambda(ctx) P(w | ctx')
 *   lambda(ctx) = d * |{w : c(ctx, w) > 0}| / c(ctx)
 *
 * where ctx' drops the oldest token. Prediction starts from the longest
 * suffix of the history that was seen in training (at most order - 1
 * tokens). The empty context is the maximum-likelihood unigram distribution,
 * so words never seen in training get probability zero.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "fedlm/corpus.hpp"
#include "fedlm/error.hpp"
#include "fedlm/predict.hpp"

namespace fedlm {

inline constexpr double default_discount = 0.75;

struct ContextCounts {
  std::map<TokenId, std::uint64_t> next;
  std::uint64_t total = 0;
};

struct NgramTable {
  int order = 3;
  double discount = default_discount;
  std::size_t vocab_size = 0;
  /// Context (oldest token first, length 0..order-1) -> continuation counts.
  std::map<std::vector<TokenId>, ContextCounts> counts;

  const ContextCounts *find(std::span<const TokenId> ctx) const {
    auto it = counts.find(std::vector<TokenId>(ctx.begin(), ctx.end()));
    return it == counts.end() ? nullptr : &it->second;
  }

  /// Full next-word distribution over [0, vocab_size) for a history.
  std::vector<double> distribution(std::span<const TokenId> history) const {
    std::vector<double> p(vocab_size, 0.0);
    const ContextCounts *uni = find({});
    if (!uni || uni->total == 0)
      return p;
    for (auto [w, c] : uni->next)
      p[w] = static_cast<double>(c) / static_cast<double>(uni->total);

    const std::size_t max_len =
        std::min<std::size_t>(static_cast<std::size_t>(order - 1), history.size());
    std::size_t start = 0;
    for (std::size_t len = max_len; len > 0; --len) {
      if (find(history.last(len))) {
        start = len;
        break;
      }
    }
    for (std::size_t len = 1; len <= start; ++len) {
      const ContextCounts &cc = *find(history.last(len));
      const double tot = static_cast<double>(cc.total);
      const double lambda = discount * static_cast<double>(cc.next.size()) / tot;
      for (auto &x : p)
        x *= lambda;
      for (auto [w, c] : cc.next)
        p[w] += std::max(static_cast<double>(c) - discount, 0.0) / tot;
    }
    return p;
  }
};

/// Counts every (context, next) pair for context lengths 0..order-1. Contexts
/// may include BOS; BOS is never a counted continuation.
inline NgramTable train_ngram(const std::vector<TokenSeq> &corpus, int order,
                              double discount, std::size_t vocab_size) {
  require(order >= 1 && order <= 5, "n-gram order must be in [1, 5]");
  require(discount > 0.0 && discount < 1.0, "discount must be in (0, 1)");
  NgramTable table{order, discount, vocab_size, {}};
  table.counts[{}];
  for (const auto &seq : corpus) {
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const TokenId w = seq[j];
      require(w < vocab_size, "token id out of range");
      for (std::size_t len = 0; len < static_cast<std::size_t>(order) && len <= j; ++len) {
        auto &cc = table.counts[std::vector<TokenId>(seq.begin() + (j - len),
                                                     seq.begin() + j)];
        ++cc.next[w];
        ++cc.total;
      }
    }
  }
  return table;
}

/// Top-k non-special words with positive probability; ties to the lower id.
inline std::vector<Prediction> predict_topk_ngram(const NgramTable &table,
                                                  std::span<const TokenId> history,
                                                  std::size_t k) {
  require(k >= 1, "k must be positive");
  const auto p = table.distribution(history);
  return topk_masked(p, k, /*drop_zero=*/true);
}

/// Sum of log P(target | history) over every prediction position.
inline double log_likelihood(const NgramTable &table, const std::vector<TokenSeq> &data) {
  double ll = 0.0;
  for (const auto &seq : data)
    for (std::size_t j = 1; j < seq.size(); ++j)
      ll += std::log(table.distribution(std::span(seq).first(j))[seq[j]]);
  return ll;
}

/// One `context-ids<TAB>next-id<TAB>count` line per entry, sorted by context
/// then next id. Context ids are space separated; the empty context is "".
inline std::string dump_table(const NgramTable &table) {
  std::ostringstream out;
  for (const auto &[ctx, cc] : table.counts) {
    std::string key;
    for (std::size_t i = 0; i < ctx.size(); ++i)
      key += (i ? " " : "") + std::to_string(ctx[i]);
    for (auto [w, c] : cc.next)
      out << key << '\t' << w << '\t' << c << '\n';
  }
  return out.str();
}

class NgramPredictor {
public:
  explicit NgramPredictor(const NgramTable &table) : table_(&table) {}

  std::size_t vocab_size() const { return table_->vocab_size; }

  std::vector<Prediction> predict_topk(std::span<const TokenId> context,
                                       std::size_t k) const {
    return predict_topk_ngram(*table_, context, k);
  }

private:
  const NgramTable *table_;
};

namespace oracle {

/// Backoff probabilities recomputed by scanning the raw corpus for every
/// query; shares no code with NgramTable.
inline std::vector<double> ngram_distribution(const std::vector<TokenSeq> &corpus,
                                              int order, double discount,
                                              std::size_t vocab_size,
                                              std::span<const TokenId> history) {
  auto count = [&](std::span<const TokenId> ctx, TokenId w) {
    std::uint64_t n = 0;
    for (const auto &seq : corpus)
      for (std::size_t j = std::max<std::size_t>(1, ctx.size()); j < seq.size(); ++j)
        if (seq[j] == w &&
            std::equal(ctx.begin(), ctx.end(), seq.begin() + (j - ctx.size())))
          ++n;
    return n;
  };
  auto level = [&](std::span<const TokenId> ctx) {
    std::vector<double> c(vocab_size);
    for (TokenId w = 0; w < vocab_size; ++w)
      c[w] = static_cast<double>(count(ctx, w));
    return c;
  };

  const auto uni = level({});
  double total = 0.0;
  for (double c : uni)
    total += c;
  std::vector<double> p(vocab_size, 0.0);
  if (total == 0.0)
    return p;
  for (TokenId w = 0; w < vocab_size; ++w)
    p[w] = uni[w] / total;

  std::size_t longest = 0;
  std::vector<std::vector<double>> levels{uni};
  for (std::size_t len = 1;
       len < static_cast<std::size_t>(order) && len <= history.size(); ++len) {
    auto c = level(history.subspan(history.size() - len));
    double tot = 0.0;
    for (double x : c)
      tot += x;
    levels.push_back(std::move(c));
    if (tot > 0.0)
      longest = len;
  }
  for (std::size_t len = 1; len <= longest; ++len) {
    const auto &c = levels[len];
    double tot = 0.0, distinct = 0.0;
    for (double x : c) {
      tot += x;
      distinct += x > 0.0 ? 1.0 : 0.0;
    }
    std::vector<double> next(vocab_size);
    for (TokenId w = 0; w < vocab_size; ++w)
      next[w] = std::max(c[w] - discount, 0.0) / tot + discount * distinct / tot * p[w];
    p = std::move(next);
  }
  return p;
}

/// Brute-force ranking: sort every non-special positive-probability word.
inline std::vector<TokenId> oracle_predict(const std::vector<TokenSeq> &corpus,
                                           int order, double discount,
                                           std::size_t vocab_size,
                                           std::span<const TokenId> history,
                                           std::size_t k) {
  const auto p = ngram_distribution(corpus, order, discount, vocab_size, history);
  std::vector<TokenId> ids;
  for (TokenId w = num_special_tokens; w < vocab_size; ++w)
    if (p[w] > 0.0)
      ids.push_back(w);
  std::stable_sort(ids.begin(), ids.end(),
                   [&](TokenId a, TokenId b) { return p[a] > p[b]; });
  if (ids.size() > k)
    ids.resize(k);
  return ids;
}

} // namespace oracle

} // namespace fedlm
