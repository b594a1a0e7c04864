// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <map>

#include "fedlm/central.hpp"
#include "fedlm/eval.hpp"
#include "fedlm/ngram.hpp"

using namespace fedlm;

namespace {

// Offers the true next token at rank `rank` when it knows the sentence,
// filling other ranks with ids that never appear as targets.
struct OracleStub {
  std::vector<TokenSeq> known;
  std::size_t rank = 0;
  std::size_t V = 100;

  std::size_t vocab_size() const { return V; }

  std::vector<Prediction> predict_topk(std::span<const TokenId> ctx, std::size_t k) const {
    std::vector<Prediction> out;
    for (TokenId filler = static_cast<TokenId>(V - 1); out.size() < k; --filler)
      out.push_back({filler, 0.0});
    for (const auto &s : known)
      if (s.size() > ctx.size() && std::equal(ctx.begin(), ctx.end(), s.begin()) &&
          rank < k && !is_special(s[ctx.size()]))
        out[rank] = {s[ctx.size()], 1.0};
    return out;
  }
};

struct FixedStub {
  std::vector<TokenId> ids;
  std::vector<Prediction> predict_topk(std::span<const TokenId>, std::size_t k) const {
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < std::min(k, ids.size()); ++i)
      out.push_back({ids[i], 0.0});
    return out;
  }
};

} // namespace

TEST(Recall, AlwaysRightIsOne) {
  const std::vector<TokenSeq> data{{bos_id, 5, 6, eos_id}, {bos_id, 5, 6, 7, eos_id}};
  EXPECT_EQ(recall_topk(OracleStub{data}, data, 1), 1.0);
}

TEST(Recall, TwoHitsOverEight) {
  // Eight word positions; FixedStub always offers 5 first.
  const std::vector<TokenSeq> data{{bos_id, 5, 6, 7, 8, eos_id}, {bos_id, 5, 9, 10, 11, eos_id}};
  EXPECT_DOUBLE_EQ(recall_topk(FixedStub{{5}}, data, 1), 0.25);
}

TEST(Recall, UnkIsMissEosExcluded) {
  const std::vector<TokenSeq> data{{bos_id, unk_id, 5, eos_id}};
  const auto rc = recall_counts(OracleStub{data}, data, {1});
  EXPECT_EQ(rc.positions, 2u);
  EXPECT_EQ(rc.hits[0], 1u);
  EXPECT_THROW(recall_topk(OracleStub{}, std::vector<TokenSeq>{{bos_id, eos_id}}, 1), Error);
  EXPECT_THROW(recall_topk(OracleStub{}, std::vector<TokenSeq>{}, 1), Error);
}

TEST(Recall, RankDecidesWhichKHits) {
  const std::vector<TokenSeq> data{{bos_id, 5, 6, eos_id}};
  const auto rc = recall_counts(OracleStub{data, 2}, data, {1, 3});
  EXPECT_EQ(rc.hits[0], 0u);
  EXPECT_EQ(rc.hits[1], 2u);
}

TEST(Recall, SpecialCandidatesAreRejected) {
  const std::vector<TokenSeq> data{{bos_id, 5, eos_id}};
  try {
    recall_topk(FixedStub{{eos_id, 5}}, data, 2);
    FAIL();
  } catch (const Error &e) {
    EXPECT_STREQ(e.what(), "special token offered as candidate");
  }
}

class RecallOnModel : public ::testing::Test {
protected:
  void SetUp() override {
    const auto text = synthesize_corpus(3, 60, 300, 4);
    vocab = build_vocab(text, 40);
    data = tokenize_all(text, vocab);
    model = init_model<float>(CifgConfig{vocab.size(), 6, 8}, 3);
  }
  Vocabulary vocab;
  std::vector<TokenSeq> data;
  CifgModel<float> model;
};

TEST_F(RecallOnModel, MonotoneInK) {
  const CifgPredictor<float> p(model);
  const auto rc = recall_counts(p, data, {1, 2, 3, 5, 10});
  for (std::size_t i = 1; i < rc.ks.size(); ++i)
    EXPECT_LE(rc.hits[i - 1], rc.hits[i]);
  const auto t = train_ngram(data, 3, 0.75, vocab.size());
  EXPECT_LE(recall_topk(NgramPredictor(t), data, 1), recall_topk(NgramPredictor(t), data, 3));
}

TEST_F(RecallOnModel, FullKCountsInVocabularyTargets) {
  const CifgPredictor<float> p(model);
  std::uint64_t positions = 0, in_vocab = 0;
  for (const auto &s : data)
    for (std::size_t t = 1; t < s.size(); ++t) {
      if (s[t] == eos_id)
        continue;
      ++positions;
      in_vocab += s[t] != unk_id;
    }
  EXPECT_DOUBLE_EQ(recall_topk(p, data, vocab.size() - num_special_tokens),
                   static_cast<double>(in_vocab) / static_cast<double>(positions));
}

TEST_F(RecallOnModel, ShuffleInvariantAndRepeatable) {
  const CifgPredictor<float> p(model);
  auto shuffled = data;
  Rng rng(9);
  rng.shuffle(std::span(shuffled));
  const auto a = recall_counts(p, data, {1, 3});
  const auto b = recall_counts(p, shuffled, {1, 3}, 3);
  EXPECT_EQ(a.hits, b.hits);
  EXPECT_EQ(a.positions, b.positions);
  EXPECT_EQ(recall_topk(p, data, 3), recall_topk(p, data, 3));
}

TEST_F(RecallOnModel, PrefixPathMatchesContextPath) {
  const CifgPredictor<float> p(model);
  const NamedPredictor slow{"slow", [&](const TokenSeq &seq, std::size_t k) {
                              std::vector<std::vector<Prediction>> out;
                              for (std::size_t t = 0; t + 1 < seq.size(); ++t)
                                out.push_back(p.predict_topk(std::span(seq).first(t + 1), k));
                              return out;
                            }};
  EXPECT_EQ(recall_counts(slow, data, {1, 3}).hits, recall_counts(p, data, {1, 3}).hits);
}

TEST_F(RecallOnModel, TrainedModelBeatsUnigram) {
  CorpusSplit<TokenSeq> sp{data, {}, {}, 0};
  CentralConfig cfg;
  cfg.lr = 1.0;
  cfg.batch_size = 20;
  cfg.max_steps = 600;
  const auto trained = train_centralized(model, sp, cfg).model;
  const auto uni = train_ngram(data, 1, 0.75, vocab.size());
  const CifgPredictor<float> cp(trained);
  const NgramPredictor up(uni);
  const auto rep = compare_report({named("cifg", cp), named("unigram", up)}, data);
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_EQ(rep.rows[0].model, "cifg");
  EXPECT_EQ(rep.rows[1].model, "unigram");
  EXPECT_GT(rep.rows[0].top1, rep.rows[1].top1);
}

TEST(CompareReport, SingleRowAndFormats) {
  const std::vector<TokenSeq> data{{bos_id, 5, 6, 7, 8, eos_id}};
  const FixedStub stub{{5, 6, 7}};
  const auto rep = compare_report({named("stub", stub)}, data);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.csv(), "model,top1,top3\nstub,0.250000,0.750000\n");
  EXPECT_EQ(rep.text(),
            "Model  Top-1 recall  Top-3 recall\n"
            "stub         25.00%        75.00%\n");
  EXPECT_THROW(compare_report({}, data), Error);
}

TEST(MetricsCsv, HeaderAndRows) {
  EXPECT_EQ(metrics_csv_header, "phase,step_or_round,examples_seen,loss,top1,top3,top1_stderr,wall_ms");
  const std::vector<MetricsRow> rows{{Phase::central, 0, 0, 2.5, 0.1, 0.2, 0.0, 0},
                                     {Phase::federated, 3, 40, 1.0, 0.25, 0.5, 0.01, 7}};
  EXPECT_EQ(to_csv(rows),
            "phase,step_or_round,examples_seen,loss,top1,top3,top1_stderr,wall_ms\n"
            "central,0,0,2.500000,0.100000,0.200000,0.000000,0\n"
            "federated,3,40,1.000000,0.250000,0.500000,0.010000,7\n");
}

TEST(Jackknife, SingleGroupIsUndefined) {
  const auto r = jackknife_ratio({3}, {10});
  EXPECT_FALSE(r.defined);
  EXPECT_DOUBLE_EQ(r.estimate, 0.3);
  EXPECT_THROW(jackknife_ratio({0}, {0}), Error);
}

TEST(Jackknife, IdenticalGroupsGiveZero) {
  const auto r = jackknife_ratio({3, 3, 3, 3}, {7, 7, 7, 7});
  EXPECT_TRUE(r.defined);
  EXPECT_EQ(r.std_error, 0.0);
}

TEST(Jackknife, MatchesDirectFormula) {
  const std::vector<std::uint64_t> h{1, 4, 2, 6}, n{5, 8, 4, 9};
  const auto r = jackknife_ratio(h, n);
  // Reference computation with the textbook formula.
  const double H = 13, N = 26;
  std::vector<double> loo;
  for (int i = 0; i < 4; ++i)
    loo.push_back((H - h[i]) / (N - n[i]));
  double mean = 0;
  for (double x : loo)
    mean += x / 4;
  double ss = 0;
  for (double x : loo)
    ss += (x - mean) * (x - mean);
  EXPECT_NEAR(r.std_error, std::sqrt(3.0 / 4.0 * ss), 1e-14);
  EXPECT_DOUBLE_EQ(r.estimate, 0.5);
}

TEST(Jackknife, DuplicatedPopulationShrinksError) {
  const std::vector<std::uint64_t> h{1, 4, 2, 6}, n{5, 8, 4, 9};
  auto h2 = h, n2 = n;
  h2.insert(h2.end(), h.begin(), h.end());
  n2.insert(n2.end(), n.begin(), n.end());
  const auto a = jackknife_ratio(h, n), b = jackknife_ratio(h2, n2);
  EXPECT_DOUBLE_EQ(a.estimate, b.estimate);
  EXPECT_LT(b.std_error, a.std_error);
}
