// SPDX-License-Identifier: Apache-2.0
/**
 * @file   run_config.hpp
 * @brief  Experiment configuration: every tunable with its default, loadable
 *         from a flat `key = value` file.
 */
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedlm/central.hpp"
#include "fedlm/cifg.hpp"
#include "fedlm/corpus.hpp"
#include "fedlm/error.hpp"
#include "fedlm/fedavg.hpp"
#include "fedlm/ngram.hpp"

namespace fedlm {

struct RunConfig {
  // randomness and execution
  std::uint64_t seed = 1;
  unsigned threads = 0; ///< 0: FEDLM_THREADS, else 1
  bool record_wall_time = false;

  // paths
  std::string corpus;
  std::string vocab;
  std::string out;
  std::string metrics;
  std::string data;
  std::string report;
  std::string checkpoint;
  std::string models;
  std::string ngram_train;
  std::string splits_out;

  // synthetic corpus
  std::uint64_t sentences = 1000;
  int source_order = 3;
  std::uint64_t source_vocab = 500;

  // splits
  double train_frac = 0.8;
  double test_frac = 0.1;
  double eval_frac = 0.1;

  // model
  std::uint64_t vocab_size = 500;
  std::uint64_t dim = 16;
  std::uint64_t hidden = 32;

  // centralized training
  double lr = 1e-3;
  std::uint64_t batch_size = 50;
  std::uint64_t steps = 1000;
  std::uint64_t eval_every = 100;
  double clip_norm = 0.0;

  // federated training
  std::uint64_t clients = 50;
  std::uint64_t eval_clients = 10;
  std::uint64_t rounds = 200;
  std::uint64_t clients_per_round_min = 5;
  std::uint64_t clients_per_round_max = 20;
  double client_lr = 0.5;
  std::uint64_t client_batch_size = 50;
  std::uint64_t client_epochs = 1;
  double eligibility = 1.0;
  double server_lr = 1.0;
  double server_momentum = 0.9;

  // baseline and evaluation
  int ngram_order = 3;
  double discount = default_discount;
  bool fed_eval = false;

  using Target = std::variant<std::uint64_t *, unsigned *, int *, double *, bool *, std::string *>;

  struct Key {
    std::string_view name;
    std::string_view help;
    Target target;
  };

  /// Every configurable key. File keys use these names; command-line flags
  /// use the same names with '-' for '_'.
  std::vector<Key> keys() {
    return {
        {"seed", "global seed; all component seeds derive from it", &seed},
        {"threads", "worker threads (0: FEDLM_THREADS or 1)", &threads},
        {"record_wall_time", "fill the wall_ms metrics column", &record_wall_time},
        {"corpus", "input corpus, one sentence per line", &corpus},
        {"vocab", "vocabulary file", &vocab},
        {"out", "primary output path", &out},
        {"metrics", "metrics CSV output path", &metrics},
        {"data", "evaluation sentences, one per line", &data},
        {"report", "report CSV output path", &report},
        {"checkpoint", "model checkpoint to read", &checkpoint},
        {"models", "comma-separated checkpoints and/or 'ngram', 'unigram'", &models},
        {"ngram_train", "training corpus for n-gram baselines", &ngram_train},
        {"splits_out", "write <prefix>.{train,test,eval}.txt", &splits_out},
        {"sentences", "synthetic sentences to generate", &sentences},
        {"source_order", "synthetic source n-gram order (2 or 3)", &source_order},
        {"source_vocab", "synthetic source vocabulary size", &source_vocab},
        {"train_frac", "training split fraction", &train_frac},
        {"test_frac", "test split fraction", &test_frac},
        {"eval_frac", "evaluation split fraction", &eval_frac},
        {"vocab_size", "model vocabulary size V including specials", &vocab_size},
        {"dim", "embedding / projection dimension D", &dim},
        {"hidden", "CIFG hidden units H", &hidden},
        {"lr", "centralized SGD learning rate", &lr},
        {"batch_size", "centralized batch size", &batch_size},
        {"steps", "centralized SGD steps", &steps},
        {"eval_every", "steps or rounds between metric rows", &eval_every},
        {"clip_norm", "global gradient-norm clip (0: off)", &clip_norm},
        {"clients", "training client population", &clients},
        {"eval_clients", "evaluation client population", &eval_clients},
        {"rounds", "federated rounds", &rounds},
        {"clients_per_round_min", "minimum cohort size to close a round", &clients_per_round_min},
        {"clients_per_round_max", "maximum cohort size", &clients_per_round_max},
        {"client_lr", "client SGD learning rate", &client_lr},
        {"client_batch_size", "client minibatch size", &client_batch_size},
        {"client_epochs", "local epochs per round", &client_epochs},
        {"eligibility", "per-round client availability probability", &eligibility},
        {"server_lr", "server Nesterov learning rate", &server_lr},
        {"server_momentum", "server Nesterov momentum", &server_momentum},
        {"ngram_order", "n-gram baseline order", &ngram_order},
        {"discount", "n-gram absolute discount", &discount},
        {"fed_eval", "evaluate per client with jackknife stderr", &fed_eval},
    };
  }

  void set(std::string_view key, const std::string &value) {
    for (auto &k : keys()) {
      if (k.name != key)
        continue;
      try {
        std::visit(
            [&](auto *p) {
              using V = std::remove_pointer_t<decltype(p)>;
              if constexpr (std::is_same_v<V, std::string>) {
                *p = value;
              } else if constexpr (std::is_same_v<V, bool>) {
                if (value == "true" || value == "1")
                  *p = true;
                else if (value == "false" || value == "0")
                  *p = false;
                else
                  throw Error("");
              } else if constexpr (std::is_same_v<V, double>) {
                std::size_t used = 0;
                *p = std::stod(value, &used);
                if (used != value.size())
                  throw Error("");
              } else {
                std::size_t used = 0;
                const long long v = std::stoll(value, &used);
                if (used != value.size() || v < 0)
                  throw Error("");
                *p = static_cast<V>(v);
              }
            },
            k.target);
      } catch (...) {
        throw Error("bad value for '" + std::string(key) + "': " + value);
      }
      return;
    }
    throw Error("unknown config key: " + std::string(key));
  }

  /// Applies `key = value` lines; '#' starts a comment.
  void load_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
      throw Error("cannot open config " + path);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.resize(hash);
      line = trim(line);
      if (line.empty())
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  unsigned resolved_threads() const { return threads ? threads : threads_from_env(); }

  CifgConfig model_config() const { return {vocab_size, dim, hidden}; }

  SplitFractions fractions() const { return {train_frac, test_frac, eval_frac}; }

  CentralConfig central_config() const {
    CentralConfig c;
    c.lr = lr;
    c.batch_size = batch_size;
    c.max_steps = steps;
    c.eval_every = eval_every;
    c.seed = seed;
    c.threads = resolved_threads();
    c.clip_norm = clip_norm;
    c.record_wall_time = record_wall_time;
    return c;
  }

  FedConfig fed_config() const {
    FedConfig f;
    f.clients_per_round_min = clients_per_round_min;
    f.clients_per_round_max = clients_per_round_max;
    f.client_lr = client_lr;
    f.client_batch_size = client_batch_size;
    f.client_epochs = client_epochs;
    f.total_rounds = rounds;
    f.eligibility_prob = eligibility;
    f.seed = seed;
    f.server_lr = server_lr;
    f.server_momentum = server_momentum;
    f.eval_every = eval_every;
    f.threads = resolved_threads();
    f.clip_norm = clip_norm;
    f.record_wall_time = record_wall_time;
    return f;
  }
};

} // namespace fedlm
