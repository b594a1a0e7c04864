// SPDX-License-Identifier: Apache-2.0
/**
 * @file   eval.hpp
 * @brief  Top-k recall, metric rows and model comparison reports.
 *
 * Recall counts one position per word token: targets that are real words
 * are hits when they appear among the top-k masked candidates, UNK targets
 * are always misses, and EOS targets are skipped entirely because the
 * keyboard never offers end-of-sentence as a candidate.
 */
#pragma once

#include <cmath>
#include <concepts>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fedlm/corpus.hpp"
#include "fedlm/error.hpp"
#include "fedlm/parallel.hpp"
#include "fedlm/predict.hpp"

namespace fedlm {

template <class P>
concept ContextPredictor = requires(const P &p, std::span<const TokenId> ctx, std::size_t k) {
  { p.predict_topk(ctx, k) } -> std::convertible_to<std::vector<Prediction>>;
};

template <class P>
concept PrefixPredictor = requires(const P &p, const TokenSeq &seq, std::size_t k) {
  { p.predict_prefixes(seq, k) } -> std::convertible_to<std::vector<std::vector<Prediction>>>;
};

/// Candidate lists for every position of seq: entry t ranks seq[t + 1].
template <ContextPredictor P>
std::vector<std::vector<Prediction>> prefix_predictions(const P &pred,
                                                        const TokenSeq &seq,
                                                        std::size_t k) {
  if constexpr (PrefixPredictor<P>) {
    return pred.predict_prefixes(seq, k);
  } else {
    std::vector<std::vector<Prediction>> out;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t)
      out.push_back(pred.predict_topk(std::span(seq).first(t + 1), k));
    return out;
  }
}

/// Hit counts for several k at once.
struct RecallCounts {
  std::vector<std::size_t> ks;
  std::vector<std::uint64_t> hits;
  std::uint64_t positions = 0;

  double recall(std::size_t i) const {
    return positions ? static_cast<double>(hits[i]) / static_cast<double>(positions) : 0.0;
  }
  RecallCounts &operator+=(const RecallCounts &o) {
    for (std::size_t i = 0; i < hits.size(); ++i)
      hits[i] += o.hits[i];
    positions += o.positions;
    return *this;
  }
};

/// Thrown by checks when a special token is offered as a candidate.
inline void assert_no_specials(const std::vector<Prediction> &cands) {
  for (const auto &c : cands)
    if (is_special(c.id))
      throw Error("special token offered as candidate");
}

template <ContextPredictor P>
RecallCounts count_hits(const P &pred, const TokenSeq &seq, const std::vector<std::size_t> &ks) {
  RecallCounts rc{ks, std::vector<std::uint64_t>(ks.size(), 0), 0};
  std::size_t kmax = 0;
  for (auto k : ks)
    kmax = std::max(kmax, k);
  const auto lists = prefix_predictions(pred, seq, kmax);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    const TokenId target = seq[t + 1];
    if (target == eos_id || target == bos_id)
      continue;
    ++rc.positions;
    assert_no_specials(lists[t]);
    if (target == unk_id)
      continue;
    for (std::size_t i = 0; i < ks.size(); ++i)
      for (std::size_t r = 0; r < std::min(ks[i], lists[t].size()); ++r)
        if (lists[t][r].id == target) {
          ++rc.hits[i];
          break;
        }
  }
  return rc;
}

/// Recall at every k in ks over data, reduced in sentence order.
template <ContextPredictor P>
RecallCounts recall_counts(const P &pred, const std::vector<TokenSeq> &data,
                           const std::vector<std::size_t> &ks, unsigned threads = 1) {
  require(!ks.empty(), "no k requested");
  for (auto k : ks)
    require(k >= 1, "k must be positive");
  std::vector<RecallCounts> per(data.size());
  parallel_for(data.size(), threads,
               [&](std::size_t i) { per[i] = count_hits(pred, data[i], ks); });
  RecallCounts total{ks, std::vector<std::uint64_t>(ks.size(), 0), 0};
  for (const auto &rc : per)
    total += rc;
  return total;
}

template <ContextPredictor P>
double recall_topk(const P &pred, const std::vector<TokenSeq> &data, std::size_t k) {
  const auto rc = recall_counts(pred, data, {k});
  if (rc.positions == 0)
    throw Error("empty evaluation");
  return rc.recall(0);
}

// ---- metrics rows ---------------------------------------------------------

enum class Phase { central, federated };

struct MetricsRow {
  Phase phase = Phase::central;
  std::uint64_t step_or_round = 0;
  std::uint64_t examples_seen = 0;
  double loss = 0.0;
  double top1 = 0.0;
  double top3 = 0.0;
  double top1_stderr = 0.0;
  std::uint64_t wall_ms = 0;
};

inline constexpr std::string_view metrics_csv_header =
    "phase,step_or_round,examples_seen,loss,top1,top3,top1_stderr,wall_ms";

inline std::string format_double(double x, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, x);
  return buf;
}

inline std::string to_csv(const std::vector<MetricsRow> &rows) {
  std::string out(metrics_csv_header);
  out += '\n';
  for (const auto &r : rows) {
    out += r.phase == Phase::central ? "central" : "federated";
    out += ',' + std::to_string(r.step_or_round) + ',' + std::to_string(r.examples_seen) +
           ',' + format_double(r.loss) + ',' + format_double(r.top1) + ',' +
           format_double(r.top3) + ',' + format_double(r.top1_stderr) + ',' +
           std::to_string(r.wall_ms) + '\n';
  }
  return out;
}

// ---- comparison report ----------------------------------------------------

/// Type-erased predictor for side-by-side reports.
struct NamedPredictor {
  std::string name;
  std::function<std::vector<std::vector<Prediction>>(const TokenSeq &, std::size_t)> prefixes;

  std::vector<Prediction> predict_topk(std::span<const TokenId> ctx, std::size_t k) const {
    TokenSeq seq(ctx.begin(), ctx.end());
    seq.push_back(eos_id);
    return prefixes(seq, k).back();
  }
  std::vector<std::vector<Prediction>> predict_prefixes(const TokenSeq &seq,
                                                        std::size_t k) const {
    return prefixes(seq, k);
  }
};

/// Wraps any predictor; the predictor must outlive the wrapper.
template <ContextPredictor P> NamedPredictor named(std::string name, const P &pred) {
  return {std::move(name), [&pred](const TokenSeq &seq, std::size_t k) {
            return prefix_predictions(pred, seq, k);
          }};
}

struct ReportRow {
  std::string model;
  double top1 = 0.0;
  double top3 = 0.0;
};

struct Report {
  std::vector<ReportRow> rows;

  std::string csv() const {
    std::string out = "model,top1,top3\n";
    for (const auto &r : rows)
      out += r.model + ',' + format_double(r.top1) + ',' + format_double(r.top3) + '\n';
    return out;
  }

  std::string text() const {
    std::size_t width = 5;
    for (const auto &r : rows)
      width = std::max(width, r.model.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(width)) << "Model"
        << "  Top-1 recall  Top-3 recall\n";
    for (const auto &r : rows)
      out << std::left << std::setw(static_cast<int>(width)) << r.model << "  "
          << std::right << std::setw(11) << format_double(100.0 * r.top1, 2) << "%  "
          << std::setw(11) << format_double(100.0 * r.top3, 2) << "%\n";
    return out.str();
  }
};

/// Top-1 / top-3 recall for each model, in the given order.
inline Report compare_report(const std::vector<NamedPredictor> &models,
                             const std::vector<TokenSeq> &data, unsigned threads = 1) {
  require(!models.empty(), "no models to compare");
  Report rep;
  for (const auto &m : models) {
    const auto rc = recall_counts(m, data, {1, 3}, threads);
    if (rc.positions == 0)
      throw Error("empty evaluation");
    rep.rows.push_back({m.name, rc.recall(0), rc.recall(1)});
  }
  return rep;
}

// ---- jackknife ------------------------------------------------------------

struct JackknifeResult {
  double estimate = 0.0; ///< pooled ratio sum(hits) / sum(positions)
  double std_error = 0.0;
  bool defined = true;   ///< false when fewer than two groups contribute
};

/// Leave-one-group-out jackknife for a ratio estimator over groups with
/// (hits_g, positions_g). Groups with zero positions are ignored.
inline JackknifeResult jackknife_ratio(const std::vector<std::uint64_t> &hits,
                                       const std::vector<std::uint64_t> &positions) {
  require(hits.size() == positions.size(), "shape mismatch");
  std::uint64_t H = 0, N = 0;
  std::vector<std::size_t> groups;
  for (std::size_t g = 0; g < hits.size(); ++g) {
    if (positions[g] == 0)
      continue;
    H += hits[g];
    N += positions[g];
    groups.push_back(g);
  }
  if (N == 0)
    throw Error("empty evaluation");
  JackknifeResult res{static_cast<double>(H) / static_cast<double>(N), 0.0, true};
  const std::size_t K = groups.size();
  if (K < 2) {
    res.defined = false;
    return res;
  }
  std::vector<double> loo(K);
  for (std::size_t i = 0; i < K; ++i) {
    const auto g = groups[i];
    loo[i] = static_cast<double>(H - hits[g]) / static_cast<double>(N - positions[g]);
  }
  // Deviations are taken from the first replicate so identical replicates
  // give exactly zero.
  double mean_dev = 0.0;
  for (double x : loo)
    mean_dev += x - loo[0];
  mean_dev /= static_cast<double>(K);
  double ss = 0.0;
  for (double x : loo) {
    const double d = (x - loo[0]) - mean_dev;
    ss += d * d;
  }
  res.std_error = std::sqrt(static_cast<double>(K - 1) / static_cast<double>(K) * ss);
  return res;
}

} // namespace fedlm
