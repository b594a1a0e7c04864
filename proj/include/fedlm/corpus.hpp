// SPDX-License-Identifier: Apache-2.0
/**
 * @file   corpus.hpp
 * @brief  Text ingestion: vocabulary, tokenization, splits, client shards and
 *         a synthetic n-gram sentence source.
 */
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedlm/error.hpp"
#include "fedlm/rng.hpp"

namespace fedlm {

using TokenId = std::uint32_t;

inline constexpr TokenId bos_id = 0;
inline constexpr TokenId eos_id = 1;
inline constexpr TokenId unk_id = 2;
inline constexpr TokenId num_special_tokens = 3;

inline constexpr bool is_special(TokenId id) { return id < num_special_tokens; }

/// Token ids of one sentence: bos, words..., eos.
using TokenSeq = std::vector<TokenId>;

class Vocabulary {
public:
  static constexpr std::string_view bos_word = "<s>";
  static constexpr std::string_view eos_word = "</s>";
  static constexpr std::string_view unk_word = "<unk>";

  Vocabulary() : words_{std::string(bos_word), std::string(eos_word), std::string(unk_word)} {}

  /// Builds from the non-special words in id order (ids start at 3).
  explicit Vocabulary(const std::vector<std::string> &words) : Vocabulary() {
    for (const auto &w : words)
      add(w);
  }

  std::size_t size() const { return words_.size(); }

  TokenId id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    return it == index_.end() ? unk_id : it->second;
  }

  const std::string &word(TokenId id) const {
    require(id < words_.size(), "token id out of range");
    return words_[id];
  }

  /// All words including the three specials, indexed by id.
  const std::vector<std::string> &words() const { return words_; }

  bool operator==(const Vocabulary &o) const { return words_ == o.words_; }

private:
  void add(const std::string &w) {
    if (w.empty() || index_.contains(w) || w == bos_word || w == eos_word ||
        w == unk_word)
      throw Error("invalid vocabulary word: '" + w + "'");
    index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.push_back(w);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases and splits on whitespace.
inline std::vector<std::string> split_words(std::string_view sentence) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : sentence) {
    const auto uc = static_cast<unsigned char>(ch);
    if (std::isspace(uc)) {
      if (!cur.empty())
        out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    }
  }
  if (!cur.empty())
    out.push_back(std::move(cur));
  return out;
}

/// Keeps the (V - 3) most frequent words; ties broken lexicographically.
inline Vocabulary build_vocab(const std::vector<std::string> &corpus,
                              std::size_t V) {
  require(!corpus.empty(), "empty corpus");
  require(V >= 4, "vocabulary size must be at least 4");
  std::map<std::string, std::uint64_t> counts;
  for (const auto &s : corpus)
    for (auto &w : split_words(s))
      ++counts[w];
  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(),
                                                            counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto &a, const auto &b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), V - num_special_tokens);
  std::vector<std::string> words;
  words.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i)
    words.push_back(ranked[i].first);
  return Vocabulary(words);
}

inline TokenSeq tokenize(std::string_view sentence, const Vocabulary &vocab) {
  TokenSeq ids{bos_id};
  for (const auto &w : split_words(sentence))
    ids.push_back(vocab.id(w));
  ids.push_back(eos_id);
  return ids;
}

inline std::vector<TokenSeq> tokenize_all(const std::vector<std::string> &corpus,
                                          const Vocabulary &vocab) {
  std::vector<TokenSeq> out;
  out.reserve(corpus.size());
  for (const auto &s : corpus)
    out.push_back(tokenize(s, vocab));
  return out;
}

/// Inverse of tokenize for in-vocabulary text; specials are dropped.
inline std::string detokenize(const TokenSeq &seq, const Vocabulary &vocab) {
  std::string out;
  for (TokenId id : seq) {
    if (id == bos_id || id == eos_id)
      continue;
    if (!out.empty())
      out.push_back(' ');
    out += vocab.word(id);
  }
  return out;
}

/// Only sequences that start at a sentence boundary are used for training.
inline bool is_trainable(const TokenSeq &seq) {
  return seq.size() >= 2 && seq.front() == bos_id;
}

inline bool is_valid_seq(const TokenSeq &seq, std::size_t V) {
  if (seq.size() < 2 || seq.front() != bos_id || seq.back() != eos_id)
    return false;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] >= V || (i > 0 && seq[i] == bos_id))
      return false;
  }
  return true;
}

// ---- client shards --------------------------------------------------------

/// One simulated device's local sentence cache.
struct ClientShard {
  std::uint64_t client_id = 0;
  std::vector<TokenSeq> sentences;

  std::size_t n_k() const { return sentences.size(); }
};

/// Shard-size spread in log space.
inline constexpr double shard_log_sigma = 0.5;

/// Draws num_clients log-normal shard sizes with the requested mean and fills
/// them from a seeded shuffle of the corpus, without replacement. Sizes are
/// capped so every shard receives at least one sentence.
inline std::vector<ClientShard> partition_clients(const std::vector<TokenSeq> &corpus,
                                                  std::size_t num_clients,
                                                  double mean_shard,
                                                  std::uint64_t seed) {
  require(num_clients >= 1, "num_clients must be positive");
  require(corpus.size() >= num_clients, "insufficient sentences");
  require(mean_shard > 0.0, "mean shard size must be positive");

  Rng rng(derive_seed(seed, {seed_tag::partition}));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span(order));

  const double mu = std::log(mean_shard) - 0.5 * shard_log_sigma * shard_log_sigma;
  std::vector<ClientShard> shards;
  shards.reserve(num_clients);
  std::size_t next = 0;
  for (std::size_t k = 0; k < num_clients; ++k) {
    const double draw = std::exp(mu + shard_log_sigma * rng.normal());
    auto size = static_cast<std::size_t>(std::max(1.0, std::round(draw)));
    const std::size_t remaining = corpus.size() - next;
    const std::size_t reserved = num_clients - k - 1;
    size = std::min(size, remaining - reserved);
    ClientShard shard{k, {}};
    shard.sentences.reserve(size);
    for (std::size_t i = 0; i < size; ++i)
      shard.sentences.push_back(corpus[order[next++]]);
    shards.push_back(std::move(shard));
  }
  return shards;
}

// ---- splits ---------------------------------------------------------------

template <class Item> struct CorpusSplit {
  std::vector<Item> train;
  std::vector<Item> test;
  std::vector<Item> eval;
  std::uint64_t seed = 0;
};

struct SplitFractions {
  double train = 0.8;
  double test = 0.1;
  double eval = 0.1;
};

/// Seeded shuffle, then train takes round(f_train n), test round(f_test n) and
/// eval the remainder.
template <class Item>
CorpusSplit<Item> split(const std::vector<Item> &corpus, SplitFractions f,
                        std::uint64_t seed) {
  require(f.train >= 0 && f.test >= 0 && f.eval >= 0 &&
              std::abs(f.train + f.test + f.eval - 1.0) <= 1e-9,
          "split fractions must be nonnegative and sum to 1");
  const std::size_t n = corpus.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {seed_tag::split}));
  rng.shuffle(std::span(order));

  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f.train * n)));
  const auto n_test =
      std::min(n - n_train, static_cast<std::size_t>(std::llround(f.test * n)));
  CorpusSplit<Item> out;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    auto &dst = i < n_train ? out.train : (i < n_train + n_test ? out.test : out.eval);
    dst.push_back(corpus[order[i]]);
  }
  return out;
}

// ---- synthetic source -----------------------------------------------------

/// Generates sentences from a random sparse n-gram source.
///
/// Every context maps to a fixed small set of successor words (drawn from a
/// Zipfian word prior) with Zipfian weights; the successor set is a pure
/// function of (seed, context). Order 3 mixes the trigram table with the
/// bigram table of the last word. Sentence length is geometric with mean
/// mean_length words.
class SyntheticSource {
public:
  static constexpr double mean_length = 4.1;
  static constexpr std::size_t successors_per_context = 8;
  static constexpr double trigram_weight = 0.5;

  SyntheticSource(int order, std::size_t vocab_size, std::uint64_t seed)
      : order_(order), vocab_size_(vocab_size),
        seed_(derive_seed(seed, {seed_tag::synth})) {
    require(order == 2 || order == 3, "source order must be 2 or 3");
    require(vocab_size >= 10, "source vocabulary must have at least 10 words");
    prior_cdf_.resize(vocab_size);
    double acc = 0.0;
    for (std::size_t w = 0; w < vocab_size; ++w) {
      acc += 1.0 / static_cast<double>(w + 1);
      prior_cdf_[w] = acc;
    }
    for (auto &c : prior_cdf_)
      c /= acc;
  }

  static std::string word_name(std::size_t w) { return "w" + std::to_string(w); }

  std::string sample_sentence(Rng &rng) {
    // P(stop after each word) = 1 / mean_length gives mean length 4.1.
    constexpr std::size_t start = ~std::size_t{0};
    std::size_t prev2 = start, prev1 = start;
    std::string out;
    do {
      const Successors *table = &successors(key(start, prev1));
      if (order_ == 3 && rng.uniform() < trigram_weight)
        table = &successors(key(prev2, prev1));
      const std::size_t w = table->sample(rng);
      if (!out.empty())
        out.push_back(' ');
      out += word_name(w);
      prev2 = prev1;
      prev1 = w;
    } while (rng.uniform() >= 1.0 / mean_length);
    return out;
  }

private:
  struct Successors {
    std::vector<std::size_t> words;
    std::vector<double> cdf;

    std::size_t sample(Rng &rng) const {
      const double u = rng.uniform();
      auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      return words[std::min<std::size_t>(it - cdf.begin(), words.size() - 1)];
    }
  };

  static std::uint64_t key(std::size_t a, std::size_t b) {
    return mix64(static_cast<std::uint64_t>(a)) ^ static_cast<std::uint64_t>(b);
  }

  const Successors &successors(std::uint64_t context) {
    auto it = cache_.find(context);
    if (it != cache_.end())
      return it->second;
    Rng rng(derive_seed(seed_, {context}));
    Successors s;
    const std::size_t m = std::min(successors_per_context, vocab_size_);
    while (s.words.size() < m) {
      const double u = rng.uniform();
      const auto w = static_cast<std::size_t>(
          std::upper_bound(prior_cdf_.begin(), prior_cdf_.end(), u) - prior_cdf_.begin());
      const std::size_t word = std::min(w, vocab_size_ - 1);
      if (std::find(s.words.begin(), s.words.end(), word) == s.words.end())
        s.words.push_back(word);
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      acc += 1.0 / std::pow(static_cast<double>(j + 1), 1.2);
      s.cdf.push_back(acc);
    }
    for (auto &c : s.cdf)
      c /= acc;
    return cache_.emplace(context, std::move(s)).first->second;
  }

  int order_;
  std::size_t vocab_size_;
  std::uint64_t seed_;
  std::vector<double> prior_cdf_;
  std::unordered_map<std::uint64_t, Successors> cache_;
};

inline std::vector<std::string> synthesize_corpus(int source_order,
                                                  std::size_t vocab_size,
                                                  std::size_t num_sentences,
                                                  std::uint64_t seed) {
  SyntheticSource source(source_order, vocab_size, seed);
  Rng rng(derive_seed(seed, {seed_tag::synth, 1}));
  std::vector<std::string> out;
  out.reserve(num_sentences);
  for (std::size_t i = 0; i < num_sentences; ++i)
    out.push_back(source.sample_sentence(rng));
  return out;
}

// ---- files ----------------------------------------------------------------

inline std::vector<std::string> read_lines(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void write_lines(const std::string &path, const std::vector<std::string> &lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path);
  for (const auto &l : lines)
    out << l << '\n';
  if (!out)
    throw Error("write failed: " + path);
}

/// Header `#V=<n>`, then one non-special word per line (line i holds id i+3).
inline void write_vocab(const std::string &path, const Vocabulary &vocab) {
  std::vector<std::string> lines{"#V=" + std::to_string(vocab.size())};
  lines.insert(lines.end(), vocab.words().begin() + num_special_tokens,
               vocab.words().end());
  write_lines(path, lines);
}

inline Vocabulary read_vocab(const std::string &path) {
  auto lines = read_lines(path);
  if (lines.empty() || !lines[0].starts_with("#V="))
    throw Error("vocabulary file missing #V= header: " + path);
  std::size_t declared = 0;
  try {
    declared = std::stoull(lines[0].substr(3));
  } catch (...) {
    throw Error("bad vocabulary header: " + lines[0]);
  }
  Vocabulary vocab(std::vector<std::string>(lines.begin() + 1, lines.end()));
  if (vocab.size() != declared)
    throw Error("vocabulary size does not match header: " + path);
  return vocab;
}

} // namespace fedlm
