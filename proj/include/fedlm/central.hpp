// SPDX-License-Identifier: Apache-2.0
/**
 * @file   central.hpp
 * @brief  Server-side minibatch SGD over a pooled training split.
 */
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "fedlm/cifg.hpp"
#include "fedlm/corpus.hpp"
#include "fedlm/eval.hpp"
#include "fedlm/optim.hpp"
#include "fedlm/rng.hpp"

namespace fedlm {

struct CentralConfig {
  double lr = 1e-3;             ///< no momentum, no weight decay
  std::size_t batch_size = 50;
  std::uint64_t max_steps = 0;
  std::uint64_t eval_every = 0; ///< 0 disables metric rows
  std::uint64_t seed = 0;
  unsigned threads = 1;
  double clip_norm = 0.0;       ///< global-norm clip; 0 is off
  bool record_wall_time = false;

  void validate() const {
    require(lr > 0.0, "learning rate must be positive");
    require(batch_size >= 1, "batch size must be positive");
  }
};

/// Called after every update with the 1-based step/round and the new model.
template <class T> using TrainObserver = std::function<void(std::uint64_t, const CifgModel<T> &)>;

template <class T> struct TrainResult {
  CifgModel<T> model;
  std::vector<MetricsRow> metrics;
};

namespace detail {

inline std::uint64_t elapsed_ms(std::chrono::steady_clock::time_point start, bool record) {
  if (!record)
    return 0;
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::steady_clock::now() - start)
                                        .count());
}

inline std::vector<TokenSeq> trainable_only(const std::vector<TokenSeq> &data) {
  std::vector<TokenSeq> out;
  out.reserve(data.size());
  for (const auto &s : data)
    if (is_trainable(s))
      out.push_back(s);
  return out;
}

} // namespace detail

/// Synchronous minibatch SGD. Each epoch visits the training split in a
/// fresh order seeded by (seed, epoch); the final batch of an epoch may be
/// short. When eval_every > 0 a row is emitted at step 0 (loss measured on
/// the eval split), after every eval_every steps (mean batch loss since the
/// previous row) and at the last step.
template <class T>
TrainResult<T> train_centralized(CifgModel<T> model, const CorpusSplit<TokenSeq> &data,
                                 const CentralConfig &cfg, const TrainObserver<T> &observer = {}) {
  cfg.validate();
  const auto train = detail::trainable_only(data.train);
  require(!train.empty() || cfg.max_steps == 0, "empty training split");
  const auto start = std::chrono::steady_clock::now();

  TrainResult<T> result{std::move(model), {}};
  auto &m = result.model;
  auto emit = [&](std::uint64_t step, std::uint64_t seen, double loss) {
    MetricsRow row{Phase::central, step, seen, loss, 0.0, 0.0, 0.0, 0};
    if (!data.eval.empty()) {
      const auto rc = recall_counts(CifgPredictor<T>(m), data.eval, {1, 3}, cfg.threads);
      row.top1 = rc.recall(0);
      row.top3 = rc.recall(1);
    }
    row.wall_ms = detail::elapsed_ms(start, cfg.record_wall_time);
    result.metrics.push_back(row);
  };
  if (cfg.eval_every > 0)
    emit(0, 0, data.eval.empty() ? 0.0 : evaluate_loss(m, data.eval));

  std::vector<std::size_t> order(train.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0, seen = 0;
  double loss_acc = 0.0;
  std::uint64_t loss_steps = 0;
  std::vector<TokenSeq> batch;
  for (std::uint64_t step = 0; step < cfg.max_steps; ++step) {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, {seed_tag::central_epoch, epoch++}));
      rng.shuffle(std::span(order));
      cursor = 0;
    }
    batch.clear();
    for (; batch.size() < cfg.batch_size && cursor < order.size(); ++cursor)
      batch.push_back(train[order[cursor]]);

    auto lg = loss_and_grads(m, batch, {cfg.threads, TiedPath::both});
    if (!std::isfinite(lg.loss))
      throw Error("non-finite loss at step " + std::to_string(step));
    clip_global_norm(lg.grads.params(), cfg.clip_norm);
    sgd_update<T>(m.params(), std::as_const(lg.grads).params(), static_cast<T>(cfg.lr));
    seen += batch.size();
    loss_acc += lg.loss;
    ++loss_steps;
    if (observer)
      observer(step + 1, m);

    const bool last = step + 1 == cfg.max_steps;
    if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      emit(step + 1, seen, loss_acc / static_cast<double>(loss_steps));
      loss_acc = 0.0;
      loss_steps = 0;
    }
  }
  return result;
}

} // namespace fedlm
