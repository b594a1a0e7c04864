// SPDX-License-Identifier: Apache-2.0
/**
 * @file   cifg.hpp
 * @brief  Coupled input-forget gate (CIFG) recurrent language model with a
 *         recurrent projection and tied input/output embeddings.
 *
 * Per timestep, with embedded input x and previous projected state r:
 *
 *   i  = sigmoid(Wi x + Ui r + bi)        f = 1 - i
 *   c~ = tanh   (Wc x + Uc r + bc)        c = f * c_prev + i * c~
 *   o  = sigmoid(Wo x + Uo r + bo)        h = o * tanh(c)
 *   r' = P h                              logits = W^T r'
 *
 * W (D x V) is the only vocabulary-sized tensor: its columns embed input
 * tokens and its transpose maps the D-dim projected state to logits. The
 * recurrence runs over the projected state r, so the recurrent matrices are
 * H x D rather than H x H. Parameter count:
 *
 *   V D + 3 (2 H D + H) + D H
 *
 * which for V = 10000, D = 96, H = 670 is 960000 + 387930 + 64320 =
 * 1,412,250, of which the embedding is 68%. A full H x H recurrence would
 * need about 1.54M gate parameters alone. P carries no bias. No peepholes.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "fedlm/corpus.hpp"
#include "fedlm/error.hpp"
#include "fedlm/parallel.hpp"
#include "fedlm/predict.hpp"
#include "fedlm/rng.hpp"
#include "fedlm/tensor.hpp"

namespace fedlm {

struct CifgConfig {
  std::size_t V = 10000;
  std::size_t D = 96;
  std::size_t H = 670;

  void validate() const {
    require(V >= 4, "vocabulary size must be at least 4");
    require(D >= 1 && H >= 1, "model dimensions must be positive");
  }
  bool operator==(const CifgConfig &) const = default;
};

enum class Gate : std::size_t { input = 0, candidate = 1, output = 2 };
inline constexpr std::array<Gate, 3> all_gates{Gate::input, Gate::candidate,
                                               Gate::output};

/// Tensor order used for storage, flattening and checkpoints.
enum class TensorId : std::size_t { W, Wi, Ui, bi, Wc, Uc, bc, Wo, Uo, bo, P };
inline constexpr std::size_t num_tensors = 11;

struct TensorShape {
  std::string_view name;
  std::size_t rows;
  std::size_t cols;
  std::size_t size() const { return rows * cols; }
};

inline std::array<TensorShape, num_tensors> tensor_shapes(const CifgConfig &c) {
  return {{{"W", c.D, c.V},
           {"Wi", c.H, c.D}, {"Ui", c.H, c.D}, {"bi", c.H, 1},
           {"Wc", c.H, c.D}, {"Uc", c.H, c.D}, {"bc", c.H, 1},
           {"Wo", c.H, c.D}, {"Uo", c.H, c.D}, {"bo", c.H, 1},
           {"P", c.D, c.H}}};
}

inline std::uint64_t param_count(const CifgConfig &c) {
  c.validate();
  const std::uint64_t V = c.V, D = c.D, H = c.H;
  return V * D + 3 * (2 * H * D + H) + D * H;
}

/// All trainable parameters in one contiguous buffer, addressable per tensor.
/// Gradients use the same type.
template <class T> class CifgModel {
public:
  using value_type = T;

  CifgModel() = default;
  explicit CifgModel(const CifgConfig &cfg) : cfg_(cfg) {
    cfg_.validate();
    std::size_t off = 0;
    const auto shapes = tensor_shapes(cfg_);
    for (std::size_t t = 0; t < num_tensors; ++t) {
      offsets_[t] = off;
      off += shapes[t].size();
    }
    params_.assign(off, T(0));
  }

  const CifgConfig &config() const { return cfg_; }
  std::size_t size() const { return params_.size(); }

  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }

  MatrixRef<T> tensor(TensorId id) { return view<T>(params_.data(), id); }
  MatrixRef<const T> tensor(TensorId id) const {
    return view<const T>(params_.data(), id);
  }

  MatrixRef<T> W() { return tensor(TensorId::W); }
  MatrixRef<const T> W() const { return tensor(TensorId::W); }
  MatrixRef<T> P() { return tensor(TensorId::P); }
  MatrixRef<const T> P() const { return tensor(TensorId::P); }

  MatrixRef<T> input_weights(Gate g) { return tensor(gate_tensor(g, 0)); }
  MatrixRef<const T> input_weights(Gate g) const { return tensor(gate_tensor(g, 0)); }
  MatrixRef<T> recurrent_weights(Gate g) { return tensor(gate_tensor(g, 1)); }
  MatrixRef<const T> recurrent_weights(Gate g) const { return tensor(gate_tensor(g, 1)); }
  std::span<T> bias(Gate g) { return tensor(gate_tensor(g, 2)).flat(); }
  std::span<const T> bias(Gate g) const { return tensor(gate_tensor(g, 2)).flat(); }

  /// Column `id` of W, i.e. W v for the one-hot v.
  std::vector<T> embedding(TokenId id) const {
    require(id < cfg_.V, "token id out of range");
    std::vector<T> e(cfg_.D);
    const auto w = W();
    for (std::size_t d = 0; d < cfg_.D; ++d)
      e[d] = w(d, id);
    return e;
  }

  template <class U> CifgModel<U> cast() const {
    CifgModel<U> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i)
      out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

  bool operator==(const CifgModel &) const = default;

private:
  static TensorId gate_tensor(Gate g, std::size_t which) {
    return static_cast<TensorId>(1 + 3 * static_cast<std::size_t>(g) + which);
  }

  template <class U, class Ptr> MatrixRef<U> view(Ptr base, TensorId id) const {
    const auto shape = tensor_shapes(cfg_)[static_cast<std::size_t>(id)];
    return {base + offsets_[static_cast<std::size_t>(id)], shape.rows, shape.cols};
  }

  CifgConfig cfg_{};
  std::array<std::size_t, num_tensors> offsets_{};
  std::vector<T> params_;
};

/// Every tensor is filled by init_uniform with a per-tensor derived seed.
template <class T> CifgModel<T> init_model(const CifgConfig &cfg, std::uint64_t seed) {
  CifgModel<T> m(cfg);
  for (std::size_t t = 0; t < num_tensors; ++t)
    fill_uniform(m.tensor(static_cast<TensorId>(t)),
                 derive_seed(seed, {seed_tag::init_tensor, t}));
  return m;
}

template <class T> struct CellState {
  std::vector<T> c;    ///< cell state, H
  std::vector<T> r;    ///< projected state P h, D
  std::vector<T> i;    ///< input gate, H
  std::vector<T> f;    ///< forget gate, exactly 1 - i
  std::vector<T> o;    ///< output gate, H
  std::vector<T> cand; ///< candidate tanh(Wc x + Uc r + bc), H
  std::vector<T> h;    ///< o * tanh(c), H

  static CellState zeros(const CifgConfig &cfg) {
    const std::vector<T> hz(cfg.H, T(0));
    return {hz, std::vector<T>(cfg.D, T(0)), hz, hz, hz, hz, hz};
  }
};

template <class T>
CellState<T> cell_step(const CifgModel<T> &model, std::span<const T> x,
                       const CellState<T> &prev) {
  const auto &cfg = model.config();
  require(x.size() == cfg.D && prev.r.size() == cfg.D && prev.c.size() == cfg.H,
          "shape mismatch");
  if (!all_finite(x) || !all_finite<T>(prev.r) || !all_finite<T>(prev.c))
    throw Error("numeric overflow");

  std::array<std::vector<T>, 3> pre;
  for (Gate g : all_gates) {
    auto &a = pre[static_cast<std::size_t>(g)];
    const auto b = model.bias(g);
    a.assign(b.begin(), b.end());
    gemv_acc(model.input_weights(g), x, std::span<T>(a));
    gemv_acc<T>(model.recurrent_weights(g), prev.r, a);
  }

  CellState<T> s;
  s.i.resize(cfg.H);
  s.f.resize(cfg.H);
  s.o.resize(cfg.H);
  s.cand.resize(cfg.H);
  s.c.resize(cfg.H);
  s.h.resize(cfg.H);
  for (std::size_t j = 0; j < cfg.H; ++j) {
    s.i[j] = sigmoid(pre[0][j]);
    s.f[j] = T(1) - s.i[j];
    s.cand[j] = std::tanh(pre[1][j]);
    s.o[j] = sigmoid(pre[2][j]);
    s.c[j] = s.f[j] * prev.c[j] + s.i[j] * s.cand[j];
    s.h[j] = s.o[j] * std::tanh(s.c[j]);
  }
  s.r.assign(cfg.D, T(0));
  gemv_acc<T>(model.P(), s.h, s.r);
  return s;
}

/// Logits W^T r for the tied output projection.
template <class T>
std::vector<T> output_logits(const CifgModel<T> &model, std::span<const T> r) {
  std::vector<T> z(model.config().V, T(0));
  gemv_t_acc(model.W(), r, std::span<T>(z));
  return z;
}

namespace detail {
inline void check_ids(std::span<const TokenId> seq, std::size_t V) {
  for (TokenId id : seq)
    if (id >= V)
      throw Error("token id out of range");
}
} // namespace detail

/// One logit vector per prediction position: position t consumes seq[t] and
/// predicts seq[t + 1]. The initial state is zero.
template <class T>
std::vector<std::vector<T>> forward(const CifgModel<T> &model, const TokenSeq &seq) {
  require(seq.size() >= 2, "sequence must hold at least two tokens");
  detail::check_ids(seq, model.config().V);
  std::vector<std::vector<T>> out;
  out.reserve(seq.size() - 1);
  auto state = CellState<T>::zeros(model.config());
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    const auto x = model.embedding(seq[t]);
    state = cell_step<T>(model, x, state);
    out.push_back(output_logits<T>(model, state.r));
  }
  return out;
}

/// Which uses of the tied W contribute to its gradient. Anything other than
/// `both` exists for tests that check each path separately.
enum class TiedPath { both, embedding_only, output_only };

struct LossOptions {
  unsigned threads = 1;
  TiedPath tied_path = TiedPath::both;
};

template <class T> struct LossAndGrads {
  double loss = 0.0;           ///< mean cross-entropy per prediction position
  std::size_t positions = 0;   ///< number of prediction positions
  CifgModel<T> grads;
};

namespace detail {

/// Sentences per gradient chunk. Chunks are reduced in order, so the result
/// is independent of the worker count.
inline constexpr std::size_t grad_chunk = 16;

/// Forward + full BPTT over one sentence, accumulating scale * dLoss into
/// grads. Returns the summed (unscaled) cross-entropy.
template <class T>
double accumulate_sequence(const CifgModel<T> &model, const TokenSeq &seq, T scale,
                           TiedPath path, CifgModel<T> &grads) {
  const auto &cfg = model.config();
  const std::size_t steps = seq.size() - 1;

  std::vector<CellState<T>> states;
  states.reserve(steps + 1);
  states.push_back(CellState<T>::zeros(cfg));
  std::vector<std::vector<T>> inputs(steps);
  std::vector<std::vector<double>> probs(steps);
  double loss = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    inputs[t] = model.embedding(seq[t]);
    states.push_back(cell_step<T>(model, inputs[t], states.back()));
    const auto z = output_logits<T>(model, states.back().r);
    probs[t] = softmax<T>(z);
    loss -= std::log(probs[t][seq[t + 1]]);
  }

  const bool out_path = path != TiedPath::embedding_only;
  const bool emb_path = path != TiedPath::output_only;
  auto dW = grads.W();
  auto dP = grads.P();
  std::vector<T> dr_next(cfg.D, T(0)), dc_next(cfg.H, T(0));
  std::vector<T> dz(cfg.V), dr(cfg.D), dh(cfg.H), de(cfg.D);
  std::array<std::vector<T>, 3> da;
  for (auto &v : da)
    v.resize(cfg.H);

  for (std::size_t t = steps; t-- > 0;) {
    const auto &st = states[t + 1];
    const auto &prev = states[t];
    for (std::size_t v = 0; v < cfg.V; ++v)
      dz[v] = static_cast<T>(probs[t][v]) * scale;
    dz[seq[t + 1]] -= scale;

    if (out_path)
      outer_acc<T>(dW, st.r, dz);
    dr = dr_next;
    gemv_acc<T>(model.W(), dz, dr);

    outer_acc<T>(dP, dr, st.h);
    std::fill(dh.begin(), dh.end(), T(0));
    gemv_t_acc<T>(model.P(), dr, dh);

    for (std::size_t j = 0; j < cfg.H; ++j) {
      const T tc = std::tanh(st.c[j]);
      const T dc = dh[j] * st.o[j] * (T(1) - tc * tc) + dc_next[j];
      const T di = dc * (st.cand[j] - prev.c[j]);
      const T dcand = dc * st.i[j];
      dc_next[j] = dc * st.f[j];
      da[0][j] = di * st.i[j] * (T(1) - st.i[j]);
      da[1][j] = dcand * (T(1) - st.cand[j] * st.cand[j]);
      da[2][j] = dh[j] * tc * st.o[j] * (T(1) - st.o[j]);
    }

    std::fill(de.begin(), de.end(), T(0));
    std::fill(dr_next.begin(), dr_next.end(), T(0));
    for (Gate g : all_gates) {
      const std::span<const T> a = da[static_cast<std::size_t>(g)];
      outer_acc<T>(grads.input_weights(g), a, inputs[t]);
      outer_acc<T>(grads.recurrent_weights(g), a, prev.r);
      auto db = grads.bias(g);
      for (std::size_t j = 0; j < cfg.H; ++j)
        db[j] += a[j];
      gemv_t_acc<T>(model.input_weights(g), a, std::span<T>(de));
      gemv_t_acc<T>(model.recurrent_weights(g), a, std::span<T>(dr_next));
    }
    if (emb_path) {
      const TokenId x = seq[t];
      for (std::size_t d = 0; d < cfg.D; ++d)
        dW(d, x) += de[d];
    }
  }
  return loss;
}

} // namespace detail

/// Mean cross-entropy over every prediction position of the batch, with full
/// (untruncated) BPTT gradients averaged the same way.
template <class T>
LossAndGrads<T> loss_and_grads(const CifgModel<T> &model,
                               const std::vector<TokenSeq> &batch,
                               const LossOptions &opts = {}) {
  require(!batch.empty(), "empty batch");
  std::size_t positions = 0;
  for (const auto &seq : batch) {
    require(seq.size() >= 2, "sequence must hold at least two tokens");
    detail::check_ids(seq, model.config().V);
    positions += seq.size() - 1;
  }
  const T scale = T(1) / static_cast<T>(positions);

  const std::size_t chunks = (batch.size() + detail::grad_chunk - 1) / detail::grad_chunk;
  std::vector<CifgModel<T>> chunk_grads(chunks, CifgModel<T>(model.config()));
  std::vector<double> chunk_loss(chunks, 0.0);
  parallel_for(chunks, opts.threads, [&](std::size_t c) {
    const std::size_t end = std::min(batch.size(), (c + 1) * detail::grad_chunk);
    for (std::size_t s = c * detail::grad_chunk; s < end; ++s)
      chunk_loss[c] += detail::accumulate_sequence(model, batch[s], scale,
                                                   opts.tied_path, chunk_grads[c]);
  });

  LossAndGrads<T> out{0.0, positions, std::move(chunk_grads[0])};
  double loss = chunk_loss[0];
  for (std::size_t c = 1; c < chunks; ++c) {
    auto dst = out.grads.params();
    const auto src = std::as_const(chunk_grads[c]).params();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] += src[i];
    loss += chunk_loss[c];
  }
  out.loss = loss / static_cast<double>(positions);
  return out;
}

/// Mean cross-entropy per prediction position, forward only.
template <class T>
double evaluate_loss(const CifgModel<T> &model, const std::vector<TokenSeq> &data) {
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto &seq : data) {
    const auto logits = forward(model, seq);
    for (std::size_t t = 0; t < logits.size(); ++t)
      total -= std::log(softmax<T>(logits[t])[seq[t + 1]]);
    positions += logits.size();
  }
  require(positions > 0, "empty evaluation");
  return total / static_cast<double>(positions);
}

/// Next-word inference. Special-token logits are ignored when ranking.
template <class T> class CifgPredictor {
public:
  explicit CifgPredictor(const CifgModel<T> &model) : model_(&model) {}

  std::size_t vocab_size() const { return model_->config().V; }

  /// Runs the context through the cell and ranks the final softmax.
  std::vector<Prediction> predict_topk(std::span<const TokenId> context,
                                       std::size_t k) const {
    require(!context.empty(), "empty context");
    check_k(k);
    detail::check_ids(context, vocab_size());
    auto state = CellState<T>::zeros(model_->config());
    for (TokenId id : context)
      state = cell_step<T>(*model_, model_->embedding(id), state);
    return rank(state.r, k);
  }

  /// Entry t ranks candidates for seq[t + 1] given seq[0..t]; one pass.
  std::vector<std::vector<Prediction>> predict_prefixes(const TokenSeq &seq,
                                                        std::size_t k) const {
    check_k(k);
    detail::check_ids(seq, vocab_size());
    std::vector<std::vector<Prediction>> out;
    if (seq.size() < 2)
      return out;
    out.reserve(seq.size() - 1);
    auto state = CellState<T>::zeros(model_->config());
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      state = cell_step<T>(*model_, model_->embedding(seq[t]), state);
      out.push_back(rank(state.r, k));
    }
    return out;
  }

private:
  void check_k(std::size_t k) const {
    require(k >= 1 && k <= vocab_size() - num_special_tokens, "k out of range");
  }

  std::vector<Prediction> rank(std::span<const T> r, std::size_t k) const {
    const auto z = output_logits<T>(*model_, r);
    const auto p = softmax<T>(z);
    return topk_masked(p, k, /*drop_zero=*/false);
  }

  const CifgModel<T> *model_;
};

} // namespace fedlm
