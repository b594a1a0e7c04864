// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedlm/cifg.hpp"
#include "fedlm/corpus.hpp"
#include "fedlm/finite_diff.hpp"
#include "fedlm/optim.hpp"

using namespace fedlm;

namespace {

std::vector<TokenSeq> random_batch(std::size_t n, std::size_t V, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSeq> out;
  for (std::size_t s = 0; s < n; ++s) {
    TokenSeq seq{bos_id};
    const auto len = 1 + rng.below(5);
    for (std::size_t t = 0; t < len; ++t)
      seq.push_back(static_cast<TokenId>(num_special_tokens + rng.below(V - num_special_tokens)));
    seq.push_back(eos_id);
    out.push_back(seq);
  }
  return out;
}

// Mean cross-entropy with the embedding lookup reading `emb` instead of the
// model's W; output logits still use W.
double untied_loss(const CifgModel<double> &model, std::span<const double> emb,
                   const std::vector<TokenSeq> &batch) {
  const auto &cfg = model.config();
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto &seq : batch) {
    auto st = CellState<double>::zeros(cfg);
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      std::vector<double> x(cfg.D);
      for (std::size_t d = 0; d < cfg.D; ++d)
        x[d] = emb[d * cfg.V + seq[t]];
      st = cell_step<double>(model, x, st);
      const auto p = softmax<double>(output_logits<double>(model, st.r));
      total -= std::log(p[seq[t + 1]]);
      ++positions;
    }
  }
  return total / static_cast<double>(positions);
}

double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-7});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

std::span<const double> slice(const std::vector<double> &v, std::size_t off, std::size_t n) {
  return std::span<const double>(v).subspan(off, n);
}

} // namespace

TEST(ParamCount, Examples) {
  EXPECT_EQ(param_count({10000, 96, 670}), 1412250u);
  EXPECT_EQ(param_count({4, 1, 1}), 14u);
  const CifgConfig a{10000, 96, 670}, b{20000, 96, 670};
  EXPECT_EQ(param_count(b) - param_count(a), 10000u * 96u);
  EXPECT_EQ(init_model<float>(a, 1).size(), 1412250u);
  EXPECT_THROW(param_count({3, 1, 1}), Error);
}

TEST(InitModel, DeterministicPerSeed) {
  const CifgConfig cfg{30, 5, 7};
  EXPECT_EQ(init_model<float>(cfg, 4), init_model<float>(cfg, 4));
  EXPECT_FALSE(init_model<float>(cfg, 4) == init_model<float>(cfg, 5));
  const auto m = init_model<double>(cfg, 4);
  const auto s = init_bound(cfg.D, cfg.V);
  for (double v : m.W().flat())
    EXPECT_LE(std::abs(v), s);
}

TEST(CellStep, ZeroWeightsGiveHalfGates) {
  const CifgConfig cfg{10, 3, 4};
  const CifgModel<double> m(cfg);
  const std::vector<double> x{0.3, -0.2, 1.0};
  const auto s = cell_step<double>(m, x, CellState<double>::zeros(cfg));
  for (std::size_t j = 0; j < cfg.H; ++j) {
    EXPECT_EQ(s.i[j], 0.5);
    EXPECT_EQ(s.f[j], 0.5);
    EXPECT_EQ(s.c[j], 0.0);
    EXPECT_EQ(s.h[j], 0.0);
  }
}

TEST(CellStep, ScalarReferenceValues) {
  const CifgConfig cfg{4, 1, 1};
  CifgModel<double> m(cfg);
  for (Gate g : all_gates) {
    m.input_weights(g)(0, 0) = 0.5;
    m.recurrent_weights(g)(0, 0) = 0.5;
  }
  m.P()(0, 0) = 0.5;
  auto prev = CellState<double>::zeros(cfg);
  prev.c = {1.0};
  const std::vector<double> x{1.0};
  const auto s = cell_step<double>(m, x, prev);
  // Independent scalar evaluation.
  const double i = 1.0 / (1.0 + std::exp(-0.5));
  const double cand = std::tanh(0.5);
  const double c = (1.0 - i) * 1.0 + i * cand;
  const double h = i * std::tanh(c);
  EXPECT_NEAR(s.i[0], i, 1e-15);
  EXPECT_NEAR(s.c[0], c, 1e-15);
  EXPECT_NEAR(s.h[0], h, 1e-15);
  // Frozen reference values.
  EXPECT_NEAR(s.i[0], 0.6224593312018546, 1e-12);
  EXPECT_NEAR(s.f[0], 1.0 - 0.6224593312018546, 1e-12);
  EXPECT_NEAR(s.cand[0], 0.46211715726000974, 1e-12);
  EXPECT_NEAR(s.c[0], 0.6651898054431133, 1e-12);
  EXPECT_NEAR(s.o[0], 0.6224593312018546, 1e-12);
  EXPECT_NEAR(s.h[0], 0.36215109644769744, 1e-12);
  EXPECT_NEAR(s.r[0], 0.18107554822384872, 1e-12);
}

TEST(CellStep, CoupledGatesSumToOne) {
  const CifgConfig cfg{30, 6, 9};
  const auto m = init_model<float>(cfg, 11);
  auto st = CellState<float>::zeros(cfg);
  for (TokenId id : {3u, 7u, 29u, 4u}) {
    st = cell_step<float>(m, m.embedding(id), st);
    for (std::size_t j = 0; j < cfg.H; ++j)
      EXPECT_EQ(st.f[j] + st.i[j], 1.0f);
  }
}

TEST(CellStep, NonFiniteInputIsReported) {
  const CifgConfig cfg{10, 2, 2};
  const CifgModel<float> m(cfg);
  const std::vector<float> x{std::nanf(""), 0.0f};
  try {
    cell_step<float>(m, x, CellState<float>::zeros(cfg));
    FAIL();
  } catch (const Error &e) {
    EXPECT_STREQ(e.what(), "numeric overflow");
  }
}

TEST(Forward, ZeroModelIsUniform) {
  const CifgConfig cfg{25, 3, 4};
  const CifgModel<double> m(cfg);
  const TokenSeq seq{bos_id, 5, 6, eos_id};
  const auto logits = forward(m, seq);
  ASSERT_EQ(logits.size(), 3u);
  for (const auto &z : logits)
    for (double v : z)
      EXPECT_EQ(v, 0.0);
  const auto lg = loss_and_grads(m, {seq});
  EXPECT_NEAR(lg.loss, std::log(25.0), 1e-12);
  EXPECT_EQ(lg.positions, 3u);
  EXPECT_NEAR(evaluate_loss(m, {seq}), std::log(25.0), 1e-12);
}

TEST(Forward, SoftmaxSumsToOne) {
  const CifgConfig cfg{40, 5, 8};
  const auto m = init_model<float>(cfg, 2);
  for (const auto &z : forward(m, TokenSeq{bos_id, 9, 17, 33, eos_id})) {
    const auto p = softmax<float>(z);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
  }
}

TEST(Forward, RejectsOutOfRangeIds) {
  const CifgModel<float> m(CifgConfig{10, 2, 2});
  EXPECT_THROW(forward(m, TokenSeq{bos_id, 10}), Error);
  EXPECT_THROW(forward(m, TokenSeq{bos_id}), Error);
}

TEST(Gradients, MatchFiniteDifferences) {
  const CifgConfig cfg{20, 4, 6};
  auto model = init_model<double>(cfg, 77);
  // Non-zero biases exercise every term.
  Rng rng(1);
  for (Gate g : all_gates)
    for (auto &b : model.bias(g))
      b = rng.uniform(-0.5, 0.5);
  const auto batch = random_batch(5, cfg.V, 3);

  const auto lg = loss_and_grads(model, batch);
  const auto fd = finite_diff_grad(
      [&](std::span<const double> p) {
        CifgModel<double> m = model;
        std::copy(p.begin(), p.end(), m.params().begin());
        return loss_and_grads(m, batch).loss;
      },
      model.params(), 1e-5);

  const std::vector<double> analytic(lg.grads.params().begin(), lg.grads.params().end());
  std::size_t off = 0;
  for (const auto &shape : tensor_shapes(cfg)) {
    const double err = max_rel_error(slice(analytic, off, shape.size()),
                                     slice(fd, off, shape.size()));
    EXPECT_LT(err, 1e-4) << shape.name;
    off += shape.size();
  }
}

TEST(Gradients, TiedPathsSeparately) {
  const CifgConfig cfg{20, 4, 6};
  const auto model = init_model<double>(cfg, 5);
  const auto batch = random_batch(4, cfg.V, 8);
  const std::size_t wn = cfg.D * cfg.V;
  const std::vector<double> w(model.W().flat().begin(), model.W().flat().end());

  const auto emb = loss_and_grads(model, batch, {1, TiedPath::embedding_only});
  const auto fd_emb = finite_diff_grad(
      [&](std::span<const double> e) { return untied_loss(model, e, batch); }, w, 1e-5);
  EXPECT_LT(max_rel_error(std::as_const(emb.grads).W().flat(), fd_emb), 1e-4);

  const auto out = loss_and_grads(model, batch, {1, TiedPath::output_only});
  const auto fd_out = finite_diff_grad(
      [&](std::span<const double> wo) {
        CifgModel<double> m = model;
        std::copy(wo.begin(), wo.end(), m.W().flat().begin());
        return untied_loss(m, w, batch);
      },
      w, 1e-5);
  EXPECT_LT(max_rel_error(std::as_const(out.grads).W().flat(), fd_out), 1e-4);

  const auto both = loss_and_grads(model, batch);
  for (std::size_t i = 0; i < wn; ++i)
    EXPECT_NEAR(both.grads.W().flat()[i],
                emb.grads.W().flat()[i] + out.grads.W().flat()[i], 1e-12);
}

TEST(Gradients, DuplicatedBatchIsInvariant) {
  const CifgConfig cfg{30, 4, 5};
  const auto model = init_model<double>(cfg, 9);
  const auto batch = random_batch(10, cfg.V, 4);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const auto a = loss_and_grads(model, batch);
  const auto b = loss_and_grads(model, doubled);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (std::size_t i = 0; i < a.grads.size(); ++i)
    EXPECT_NEAR(a.grads.params()[i], b.grads.params()[i], 1e-12);
}

TEST(Gradients, DeterministicAcrossThreadCounts) {
  const CifgConfig cfg{50, 6, 8};
  const auto model = init_model<float>(cfg, 12);
  const auto batch = random_batch(70, cfg.V, 6);
  const auto a = loss_and_grads(model, batch, {1});
  const auto b = loss_and_grads(model, batch, {1});
  const auto c = loss_and_grads(model, batch, {4});
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grads, b.grads);
  EXPECT_EQ(a.loss, c.loss);
  EXPECT_EQ(a.grads, c.grads);
}

TEST(Training, LossDecreasesUnderGradientDescent) {
  const CifgConfig cfg{40, 6, 10};
  auto model = init_model<double>(cfg, 21);
  const auto text = synthesize_corpus(2, 37, 50, 2);
  const auto corpus = tokenize_all(text, build_vocab(text, 40));
  double prev = loss_and_grads(model, corpus).loss;
  const double first = prev;
  for (int step = 0; step < 100; ++step) {
    const auto lg = loss_and_grads(model, corpus);
    sgd_update<double>(model.params(), std::as_const(lg.grads).params(), 0.2);
    const double now = loss_and_grads(model, corpus).loss;
    EXPECT_LT(now, prev) << "step " << step;
    prev = now;
  }
  EXPECT_LT(prev, first);
}

TEST(Predictor, ZeroModelBreaksTiesToLowestIds) {
  const CifgModel<float> m(CifgConfig{12, 3, 3});
  const CifgPredictor<float> p(m);
  const TokenSeq ctx{bos_id};
  const auto top = p.predict_topk(ctx, 3);
  ASSERT_EQ(top.size(), 3u);
  EXPECT_EQ(top[0].id, 3u);
  EXPECT_EQ(top[1].id, 4u);
  EXPECT_EQ(top[2].id, 5u);
  EXPECT_EQ(p.predict_topk(ctx, 9).size(), 9u);
  EXPECT_THROW(p.predict_topk(ctx, 0), Error);
  EXPECT_THROW(p.predict_topk(ctx, 10), Error);
  EXPECT_THROW(p.predict_topk(TokenSeq{}, 1), Error);
}

TEST(Predictor, SpecialsNeverOffered) {
  const CifgConfig cfg{8, 1, 1};
  CifgModel<double> m(cfg);
  // r = P h > 0 after any step; make specials carry the largest logits.
  m.input_weights(Gate::output)(0, 0) = 0.0;
  m.bias(Gate::input)[0] = 2.0;
  m.bias(Gate::candidate)[0] = 2.0;
  m.P()(0, 0) = 1.0;
  for (TokenId id = 0; id < cfg.V; ++id)
    m.W()(0, id) = is_special(id) ? 5.0 : 0.1 * id;
  const auto top = CifgPredictor<double>(m).predict_topk(TokenSeq{bos_id}, 5);
  ASSERT_EQ(top.size(), 5u);
  for (const auto &pr : top)
    EXPECT_FALSE(is_special(pr.id));
  EXPECT_EQ(top[0].id, 7u);
}

TEST(Predictor, MemorizesSingleSentence) {
  const auto vocab = build_vocab({"a b"}, 10);
  const CifgConfig cfg{vocab.size(), 4, 6};
  auto model = init_model<double>(cfg, 3);
  const std::vector<TokenSeq> data{tokenize("a b", vocab)};
  for (int step = 0; step < 300; ++step) {
    const auto lg = loss_and_grads(model, data);
    sgd_update<double>(model.params(), std::as_const(lg.grads).params(), 1.0);
  }
  const TokenSeq ctx{bos_id, vocab.id("a")};
  EXPECT_EQ(CifgPredictor<double>(model).predict_topk(ctx, 1)[0].id, vocab.id("b"));
}

TEST(Predictor, PrefixesMatchIndividualCalls) {
  const CifgConfig cfg{30, 4, 5};
  const auto m = init_model<float>(cfg, 8);
  const CifgPredictor<float> p(m);
  const TokenSeq seq{bos_id, 4, 9, 22, eos_id};
  const auto all = p.predict_prefixes(seq, 3);
  ASSERT_EQ(all.size(), 4u);
  for (std::size_t t = 0; t < all.size(); ++t)
    EXPECT_EQ(all[t], p.predict_topk(std::span(seq).first(t + 1), 3));
}
