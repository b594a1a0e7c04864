// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cli.hpp
 * @brief  The fedlm command line: gen, train-server, train-federated, eval,
 *         compare and quantize.
 *
 * Settings resolve as command line > --config file > built-in default.
 * Exit codes: 0 success, 1 usage error, 2 runtime error.
 */
#pragma once

#include <CLI11.hpp>

#include <iostream>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedlm/central.hpp"
#include "fedlm/checkpoint.hpp"
#include "fedlm/cifg.hpp"
#include "fedlm/corpus.hpp"
#include "fedlm/eval.hpp"
#include "fedlm/fedavg.hpp"
#include "fedlm/ngram.hpp"
#include "fedlm/quantize.hpp"
#include "fedlm/run_config.hpp"

namespace fedlm::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_usage = 1;
inline constexpr int exit_runtime = 2;

namespace detail {

inline std::string flag_name(std::string_view key) {
  std::string s(key);
  for (auto &c : s)
    if (c == '_')
      c = '-';
  return "--" + s;
}

inline std::vector<std::string> nonempty_lines(const std::string &path) {
  auto lines = read_lines(path);
  std::erase_if(lines, [](const std::string &l) { return split_words(l).empty(); });
  return lines;
}

inline void need(const std::string &value, const char *flag) {
  if (value.empty())
    throw CLI::RequiredError(flag);
}

struct Prepared {
  Vocabulary vocab;
  CorpusSplit<TokenSeq> split;
};

/// Corpus -> split -> vocabulary from the training split -> token ids.
inline Prepared prepare_corpus(const RunConfig &rc, std::ostream &out) {
  const auto lines = nonempty_lines(rc.corpus);
  const auto raw = split(lines, rc.fractions(), rc.seed);
  if (raw.train.empty())
    throw Error("empty corpus");
  Prepared p{build_vocab(raw.train, rc.vocab_size), {}};
  p.split.train = tokenize_all(raw.train, p.vocab);
  p.split.test = tokenize_all(raw.test, p.vocab);
  p.split.eval = tokenize_all(raw.eval, p.vocab);
  p.split.seed = rc.seed;
  if (!rc.splits_out.empty()) {
    write_lines(rc.splits_out + ".train.txt", raw.train);
    write_lines(rc.splits_out + ".test.txt", raw.test);
    write_lines(rc.splits_out + ".eval.txt", raw.eval);
  }
  const std::string vocab_path = rc.vocab.empty() ? rc.out + ".vocab" : rc.vocab;
  write_vocab(vocab_path, p.vocab);
  out << "corpus: " << lines.size() << " sentences (train " << raw.train.size() << ", test "
      << raw.test.size() << ", eval " << raw.eval.size() << "), vocabulary " << p.vocab.size()
      << " -> " << vocab_path << "\n";
  return p;
}

inline CifgModel<float> initial_model(const RunConfig &rc, std::size_t vocab_size) {
  auto cfg = rc.model_config();
  cfg.V = vocab_size;
  return init_model<float>(cfg, derive_seed(rc.seed, {seed_tag::model_init}));
}

inline void write_metrics(const RunConfig &rc, const std::vector<MetricsRow> &rows,
                          std::ostream &out) {
  if (rc.metrics.empty())
    return;
  write_file(rc.metrics, to_csv(rows));
  out << "metrics: " << rows.size() << " rows -> " << rc.metrics << "\n";
}

inline void print_last(const std::vector<MetricsRow> &rows, std::ostream &out) {
  if (rows.empty())
    return;
  const auto &r = rows.back();
  out << "final: loss " << format_double(r.loss, 4) << ", top-1 " << format_double(r.top1, 4)
      << ", top-3 " << format_double(r.top3, 4) << "\n";
}

inline int cmd_gen(const RunConfig &rc, std::ostream &out) {
  need(rc.out, "--out");
  const auto sentences = synthesize_corpus(rc.source_order, rc.source_vocab, rc.sentences, rc.seed);
  write_lines(rc.out, sentences);
  out << sentences.size() << " sentences -> " << rc.out << "\n";
  return exit_ok;
}

inline int cmd_train_server(const RunConfig &rc, std::ostream &out) {
  need(rc.corpus, "--corpus");
  need(rc.out, "--out");
  auto prep = prepare_corpus(rc, out);
  auto model = initial_model(rc, prep.vocab.size());
  out << "model: " << param_count(model.config()) << " parameters\n";
  auto result = train_centralized(std::move(model), prep.split, rc.central_config());
  write_file(rc.out, encode_checkpoint(result.model));
  out << "checkpoint -> " << rc.out << "\n";
  write_metrics(rc, result.metrics, out);
  print_last(result.metrics, out);
  return exit_ok;
}

inline int cmd_train_federated(const RunConfig &rc, std::ostream &out) {
  need(rc.corpus, "--corpus");
  need(rc.out, "--out");
  auto prep = prepare_corpus(rc, out);
  const auto population = partition_clients(
      prep.split.train, rc.clients,
      static_cast<double>(prep.split.train.size()) / static_cast<double>(rc.clients), rc.seed);
  std::vector<ClientShard> eval_population;
  if (!prep.split.eval.empty()) {
    const auto n = std::min<std::size_t>(rc.eval_clients, prep.split.eval.size());
    eval_population = partition_clients(
        prep.split.eval, n, static_cast<double>(prep.split.eval.size()) / static_cast<double>(n),
        derive_seed(rc.seed, {seed_tag::partition, 1}));
  }
  auto model = initial_model(rc, prep.vocab.size());
  out << "model: " << param_count(model.config()) << " parameters; " << population.size()
      << " training clients, " << eval_population.size() << " eval clients\n";
  auto result = run_federated(std::move(model), population, eval_population, rc.fed_config());
  write_file(rc.out, encode_checkpoint(result.model));
  out << "checkpoint -> " << rc.out << "\n";
  write_metrics(rc, result.metrics, out);
  print_last(result.metrics, out);
  return exit_ok;
}

inline std::vector<TokenSeq> load_eval_data(const RunConfig &rc, const Vocabulary &vocab) {
  need(rc.data, "--data");
  return tokenize_all(nonempty_lines(rc.data), vocab);
}

inline CifgModel<float> load_checked(const std::string &path, const Vocabulary &vocab) {
  auto model = load_model<float>(path);
  if (model.config().V != vocab.size())
    throw Error("checkpoint " + path + " has V=" + std::to_string(model.config().V) +
                " but the vocabulary has " + std::to_string(vocab.size()) + " entries");
  return model;
}

inline void emit_report(const RunConfig &rc, const Report &rep, std::ostream &out) {
  out << rep.text() << "\n" << rep.csv();
  if (!rc.report.empty())
    write_file(rc.report, rep.csv());
}

inline int cmd_eval(const RunConfig &rc, std::ostream &out) {
  need(rc.checkpoint, "--checkpoint");
  need(rc.vocab, "--vocab");
  const auto vocab = read_vocab(rc.vocab);
  const auto model = load_checked(rc.checkpoint, vocab);
  const auto data = load_eval_data(rc, vocab);
  if (rc.fed_eval) {
    const auto n = std::min<std::size_t>(rc.eval_clients, data.size());
    require(n > 0, "empty evaluation");
    const auto shards = partition_clients(
        data, n, static_cast<double>(data.size()) / static_cast<double>(n),
        derive_seed(rc.seed, {seed_tag::partition, 1}));
    const auto fe = federated_eval(model, shards, rc.resolved_threads());
    out << "federated eval over " << shards.size() << " clients\n"
        << "top-1 " << format_double(fe.top1) << " +/- " << format_double(fe.top1_stderr)
        << (fe.stderr_defined ? "" : " (undefined: one client)") << "\n"
        << "top-3 " << format_double(fe.top3) << " +/- " << format_double(fe.top3_stderr) << "\n";
    if (!rc.report.empty())
      write_file(rc.report, "model,top1,top1_stderr,top3,top3_stderr\n" + rc.checkpoint + ',' +
                                format_double(fe.top1) + ',' + format_double(fe.top1_stderr) +
                                ',' + format_double(fe.top3) + ',' +
                                format_double(fe.top3_stderr) + '\n');
    return exit_ok;
  }
  const CifgPredictor<float> pred(model);
  emit_report(rc, compare_report({named(rc.checkpoint, pred)}, data, rc.resolved_threads()), out);
  return exit_ok;
}

inline int cmd_compare(const RunConfig &rc, std::ostream &out) {
  need(rc.models, "--models");
  need(rc.vocab, "--vocab");
  const auto vocab = read_vocab(rc.vocab);
  const auto data = load_eval_data(rc, vocab);

  std::vector<std::string> names;
  std::stringstream ss(rc.models);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty())
      names.push_back(item);
  require(!names.empty(), "no models to compare");

  // Storage outlives the type-erased predictors.
  std::vector<std::unique_ptr<CifgModel<float>>> cifgs;
  std::vector<std::unique_ptr<CifgPredictor<float>>> cifg_preds;
  std::vector<std::unique_ptr<NgramTable>> tables;
  std::vector<std::unique_ptr<NgramPredictor>> ngram_preds;
  std::vector<NamedPredictor> models;
  for (const auto &name : names) {
    if (name == "ngram" || name == "unigram") {
      need(rc.ngram_train, "--ngram-train");
      const auto train = tokenize_all(nonempty_lines(rc.ngram_train), vocab);
      const int order = name == "unigram" ? 1 : rc.ngram_order;
      tables.push_back(std::make_unique<NgramTable>(
          train_ngram(train, order, rc.discount, vocab.size())));
      ngram_preds.push_back(std::make_unique<NgramPredictor>(*tables.back()));
      models.push_back(named(name, *ngram_preds.back()));
    } else {
      cifgs.push_back(std::make_unique<CifgModel<float>>(load_checked(name, vocab)));
      cifg_preds.push_back(std::make_unique<CifgPredictor<float>>(*cifgs.back()));
      models.push_back(named(name, *cifg_preds.back()));
    }
  }
  emit_report(rc, compare_report(models, data, rc.resolved_threads()), out);
  return exit_ok;
}

inline int cmd_quantize(const RunConfig &rc, std::ostream &out) {
  need(rc.checkpoint, "--checkpoint");
  need(rc.out, "--out");
  const auto model = decode_checkpoint<float>(read_file(rc.checkpoint));
  const auto bytes = encode_quantized(quantize(model));
  write_file(rc.out, bytes);
  out << param_count(model.config()) << " parameters -> " << bytes.size() << " bytes ("
      << format_double(static_cast<double>(bytes.size()) / 1e6, 3) << " MB) -> " << rc.out
      << "\n";
  return exit_ok;
}

/// Finds --config before full parsing so the file can seed the defaults.
inline std::string find_config_path(const std::vector<std::string> &args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      return args[i + 1];
    if (args[i].starts_with("--config="))
      return args[i].substr(9);
  }
  return {};
}

} // namespace detail

/// args excludes the program name.
inline int run(std::vector<std::string> args, std::ostream &out, std::ostream &err) {
  RunConfig rc;
  CLI::App app{"fedlm: federated next-word prediction simulator", "fedlm"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  try {
    config_path = detail::find_config_path(args);
    if (!config_path.empty())
      rc.load_file(config_path);
  } catch (const Error &e) {
    err << "error: " << e.what() << "\n";
    return exit_usage;
  }

  app.add_option("--config", config_path, "flat key = value config file");
  for (auto &key : rc.keys()) {
    const auto flag = detail::flag_name(key.name);
    const std::string help(key.help);
    std::visit(
        [&](auto *p) {
          using V = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<V, bool>)
            app.add_flag(flag, *p, help);
          else if (key.name == "out")
            app.add_option("-o," + flag, *p, help);
          else
            app.add_option(flag, *p, help)->capture_default_str();
        },
        key.target);
  }
  app.add_option_function<std::uint64_t>(
      "--clients-per-round",
      [&](std::uint64_t n) { rc.clients_per_round_min = rc.clients_per_round_max = n; },
      "fixed cohort size (sets min and max)");

  using Command = int (*)(const RunConfig &, std::ostream &);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"gen", "write a synthetic corpus", detail::cmd_gen},
      {"train-server", "centralized SGD training", detail::cmd_train_server},
      {"train-federated", "FederatedAveraging training", detail::cmd_train_federated},
      {"eval", "recall of one checkpoint", detail::cmd_eval},
      {"compare", "recall report over several models", detail::cmd_compare},
      {"quantize", "8-bit quantize a checkpoint", detail::cmd_quantize},
  };
  Command selected = nullptr;
  for (const auto &[name, help, fn] : commands) {
    auto *sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->callback([&selected, fn = fn] { selected = fn; });
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError &e) {
    err << "usage error: " << e.what() << "\n";
    return exit_usage;
  }

  try {
    return selected(rc, out);
  } catch (const CLI::RequiredError &e) {
    err << "usage error: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return exit_runtime;
  }
}

} // namespace fedlm::cli
