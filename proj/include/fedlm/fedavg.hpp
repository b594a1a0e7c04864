// SPDX-License-Identifier: Apache-2.0
/**
 * @file   fedavg.hpp
 * @brief  FederatedAveraging simulation: cohort sampling, local client SGD,
 *         example-weighted aggregation and a Nesterov server optimizer.
 *
 * One round:
 *   1. every client is independently available with eligibility_prob;
 *   2. a cohort of [min, max] available clients is drawn without replacement
 *      (too few available clients skips the round);
 *   3. each client starts from w_t and runs plain SGD at client_lr over its
 *      shard, returning its weights w_k and example count n_k;
 *   4. the server averages sum_k (n_k / N) w_k and feeds the pseudo-gradient
 *      w_t - average to Nesterov momentum.
 * With server momentum 0 and server lr 1 the new global model is exactly the
 * weighted average.
 *
 * The server side only ever sees ClientUpdate values; shards stay inside
 * client_round.
 */
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fedlm/central.hpp"
#include "fedlm/cifg.hpp"
#include "fedlm/corpus.hpp"
#include "fedlm/eval.hpp"
#include "fedlm/optim.hpp"
#include "fedlm/parallel.hpp"
#include "fedlm/rng.hpp"

namespace fedlm {

struct FedConfig {
  std::size_t clients_per_round_min = 5;
  std::size_t clients_per_round_max = 20;
  double client_lr = 0.5;
  std::size_t client_batch_size = 50;
  std::size_t client_epochs = 1;
  std::uint64_t total_rounds = 0;
  double eligibility_prob = 1.0;
  std::uint64_t seed = 0;
  double server_lr = 1.0;
  double server_momentum = 0.9;
  std::uint64_t eval_every = 0;
  unsigned threads = 1;
  double clip_norm = 0.0;
  bool record_wall_time = false;
  /// Consecutive skipped rounds tolerated before giving up.
  std::uint64_t max_skipped_rounds = 10000;

  void validate() const {
    require(clients_per_round_min >= 1 &&
                clients_per_round_min <= clients_per_round_max,
            "clients per round: need 1 <= min <= max");
    require(client_lr >= 0.0, "client learning rate must be nonnegative");
    require(client_batch_size >= 1 && client_epochs >= 1,
            "client batch size and epochs must be positive");
    require(eligibility_prob >= 0.0 && eligibility_prob <= 1.0,
            "eligibility probability must be in [0, 1]");
    require(server_momentum >= 0.0 && server_momentum < 1.0,
            "server momentum must be in [0, 1)");
  }
};

template <class T> struct ClientUpdate {
  std::uint64_t client_id = 0;
  std::vector<T> weights;
  std::size_t n_k = 0;
  double local_loss = 0.0;
};

template <class T> struct ServerState {
  std::uint64_t round = 0;
  CifgModel<T> global;
  OptimizerState<T> opt;

  static ServerState start(CifgModel<T> model, const FedConfig &cfg) {
    const auto n = model.size();
    return {0, std::move(model),
            OptimizerState<T>::nesterov(n, static_cast<T>(cfg.server_lr),
                                        static_cast<T>(cfg.server_momentum))};
  }
};

/// Indices of clients available at the given sampling attempt.
inline std::vector<std::size_t> available_clients(std::size_t population,
                                                  std::uint64_t attempt,
                                                  const FedConfig &cfg) {
  Rng rng(derive_seed(cfg.seed, {seed_tag::availability, attempt}));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < population; ++k)
    if (rng.uniform() < cfg.eligibility_prob)
      out.push_back(k);
  return out;
}

/// Cohort for one sampling attempt as ascending population indices, or
/// nullopt when fewer than clients_per_round_min clients are available.
inline std::optional<std::vector<std::size_t>>
sample_clients(const std::vector<ClientShard> &population, std::uint64_t attempt,
               const FedConfig &cfg) {
  cfg.validate();
  require(population.size() >= cfg.clients_per_round_min, "population too small");
  auto avail = available_clients(population.size(), attempt, cfg);
  if (avail.size() < cfg.clients_per_round_min)
    return std::nullopt;
  Rng rng(derive_seed(cfg.seed, {seed_tag::cohort, attempt}));
  const std::size_t hi = std::min(cfg.clients_per_round_max, avail.size());
  const std::size_t count = cfg.clients_per_round_min + rng.below(hi - cfg.clients_per_round_min + 1);
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i)
    std::swap(avail[i], avail[i + rng.below(avail.size() - i)]);
  avail.resize(count);
  std::sort(avail.begin(), avail.end());
  return avail;
}

/// Local training on one device: client_epochs passes of plain SGD over the
/// shard in minibatches, each epoch in a seeded order.
template <class T>
ClientUpdate<T> client_round(const CifgModel<T> &global, const ClientShard &shard,
                             const FedConfig &cfg, std::uint64_t round) {
  const auto data = detail::trainable_only(shard.sentences);
  require(!data.empty(), "empty client shard");
  CifgModel<T> local = global;
  double loss_sum = 0.0;
  std::size_t positions = 0;
  std::vector<std::size_t> order(data.size());
  std::vector<TokenSeq> batch;
  for (std::size_t epoch = 0; epoch < cfg.client_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, {seed_tag::client_epoch, round, shard.client_id, epoch}));
    rng.shuffle(std::span(order));
    for (std::size_t b = 0; b < order.size(); b += cfg.client_batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.client_batch_size); ++i)
        batch.push_back(data[order[i]]);
      auto lg = loss_and_grads(local, batch);
      if (!std::isfinite(lg.loss))
        throw Error("non-finite loss on client " + std::to_string(shard.client_id));
      clip_global_norm(lg.grads.params(), cfg.clip_norm);
      sgd_update<T>(local.params(), std::as_const(lg.grads).params(),
                    static_cast<T>(cfg.client_lr));
      loss_sum += lg.loss * static_cast<double>(lg.positions);
      positions += lg.positions;
    }
  }
  const auto p = local.params();
  return {shard.client_id, std::vector<T>(p.begin(), p.end()), data.size(),
          loss_sum / static_cast<double>(positions)};
}

/// n_k / N for each update, in the order given.
template <class T>
std::vector<double> aggregation_weights(std::span<const ClientUpdate<T>> updates) {
  double N = 0.0;
  for (const auto &u : updates) {
    require(u.n_k >= 1, "client update without examples");
    N += static_cast<double>(u.n_k);
  }
  std::vector<double> w;
  w.reserve(updates.size());
  for (const auto &u : updates)
    w.push_back(static_cast<double>(u.n_k) / N);
  return w;
}

/// sum_k (n_k / N) w_k, summed in ascending client_id order. The sum is
/// formed as w_first + sum_k (n_k / N)(w_k - w_first), which is the same
/// convex combination and returns identical updates bit-exactly.
template <class T>
std::vector<T> aggregate(std::span<const ClientUpdate<T>> updates) {
  if (updates.empty())
    throw Error("no updates");
  std::vector<const ClientUpdate<T> *> sorted;
  for (const auto &u : updates)
    sorted.push_back(&u);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](auto *a, auto *b) { return a->client_id < b->client_id; });
  const std::size_t n = sorted.front()->weights.size();
  for (auto *u : sorted)
    require(u->weights.size() == n, "shape mismatch");

  double N = 0.0;
  for (auto *u : sorted) {
    require(u->n_k >= 1, "client update without examples");
    N += static_cast<double>(u->n_k);
  }
  const auto &base = sorted.front()->weights;
  std::vector<double> acc(n, 0.0);
  for (auto *u : sorted) {
    const double a = static_cast<double>(u->n_k) / N;
    for (std::size_t i = 0; i < n; ++i)
      acc[i] += a * (static_cast<double>(u->weights[i]) - static_cast<double>(base[i]));
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<T>(static_cast<double>(base[i]) + acc[i]);
  return out;
}

/// w_{t+1} from the averaged client weights via Nesterov on the
/// pseudo-gradient g = w_t - average:
///   v' = mu v + g;  w_{t+1} = w_t - lr (mu v' + g)
/// evaluated as average - ((lr - 1) g + lr mu v'), so mu = 0, lr = 1 returns
/// the average bit-exactly.
template <class T> void server_update(ServerState<T> &state, std::span<const T> averaged) {
  auto w = state.global.params();
  auto &opt = state.opt;
  require(averaged.size() == w.size() && opt.velocity.size() == w.size(), "shape mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T g = w[i] - averaged[i];
    const T v = opt.momentum * opt.velocity[i] + g;
    opt.velocity[i] = v;
    w[i] = averaged[i] - ((opt.lr - T(1)) * g + opt.lr * opt.momentum * v);
  }
  ++state.round;
}

struct FederatedEval {
  double top1 = 0.0;
  double top3 = 0.0;
  double top1_stderr = 0.0;
  double top3_stderr = 0.0;
  bool stderr_defined = true; ///< false with a single contributing client
};

/// Each client scores its own shard; recall is pooled over tokens and the
/// uncertainty is a leave-one-client-out jackknife.
template <class T>
FederatedEval federated_eval(const CifgModel<T> &model,
                             const std::vector<ClientShard> &eval_population,
                             unsigned threads = 1) {
  require(!eval_population.empty(), "empty evaluation population");
  const CifgPredictor<T> pred(model);
  std::vector<RecallCounts> per(eval_population.size());
  parallel_for(eval_population.size(), threads, [&](std::size_t c) {
    per[c] = recall_counts(pred, eval_population[c].sentences, {1, 3});
  });
  std::vector<std::uint64_t> h1, h3, pos;
  for (const auto &rc : per) {
    h1.push_back(rc.hits[0]);
    h3.push_back(rc.hits[1]);
    pos.push_back(rc.positions);
  }
  const auto j1 = jackknife_ratio(h1, pos);
  const auto j3 = jackknife_ratio(h3, pos);
  return {j1.estimate, j3.estimate, j1.std_error, j3.std_error, j1.defined};
}

/// The full round loop. When eval_every > 0, metric rows are emitted at
/// round 0 (loss = pooled cross-entropy on the eval population), every
/// eval_every rounds and at the final round; later rows carry the
/// n_k-weighted mean local loss of the rounds since the previous row.
template <class T>
TrainResult<T> run_federated(CifgModel<T> initial, const std::vector<ClientShard> &population,
                             const std::vector<ClientShard> &eval_population,
                             const FedConfig &cfg, const TrainObserver<T> &observer = {}) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto state = ServerState<T>::start(std::move(initial), cfg);
  std::vector<MetricsRow> rows;

  auto emit = [&](std::uint64_t round, std::uint64_t seen, double loss) {
    MetricsRow row{Phase::federated, round, seen, loss, 0.0, 0.0, 0.0, 0};
    if (!eval_population.empty()) {
      const auto fe = federated_eval(state.global, eval_population, cfg.threads);
      row.top1 = fe.top1;
      row.top3 = fe.top3;
      row.top1_stderr = fe.top1_stderr;
    }
    row.wall_ms = detail::elapsed_ms(start, cfg.record_wall_time);
    rows.push_back(row);
  };
  if (cfg.eval_every > 0) {
    double loss = 0.0;
    if (!eval_population.empty()) {
      std::vector<TokenSeq> pooled;
      for (const auto &c : eval_population)
        pooled.insert(pooled.end(), c.sentences.begin(), c.sentences.end());
      loss = evaluate_loss(state.global, pooled);
    }
    emit(0, 0, loss);
  }

  std::uint64_t attempt = 0, seen = 0;
  double loss_acc = 0.0, loss_weight = 0.0;
  for (std::uint64_t round = 0; round < cfg.total_rounds; ++round) {
    std::optional<std::vector<std::size_t>> cohort;
    for (std::uint64_t skipped = 0; !(cohort = sample_clients(population, attempt++, cfg));) {
      if (++skipped > cfg.max_skipped_rounds)
        throw Error("too many skipped rounds: clients rarely available");
    }

    std::vector<ClientUpdate<T>> updates(cohort->size());
    parallel_for(cohort->size(), cfg.threads, [&](std::size_t i) {
      updates[i] = client_round(state.global, population[(*cohort)[i]], cfg, round);
    });
    for (const auto &u : updates) {
      seen += u.n_k * cfg.client_epochs;
      loss_acc += u.local_loss * static_cast<double>(u.n_k);
      loss_weight += static_cast<double>(u.n_k);
    }
    const auto averaged = aggregate<T>(updates);
    server_update<T>(state, averaged);
    if (observer)
      observer(round + 1, state.global);

    const bool last = round + 1 == cfg.total_rounds;
    if (cfg.eval_every > 0 && ((round + 1) % cfg.eval_every == 0 || last)) {
      emit(round + 1, seen, loss_acc / loss_weight);
      loss_acc = loss_weight = 0.0;
    }
  }
  return {std::move(state.global), std::move(rows)};
}

} // namespace fedlm
