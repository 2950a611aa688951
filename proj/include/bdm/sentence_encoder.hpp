#pragma once

// Transformer sentence encoder: summed word + char n-gram input embeddings,
// sinusoidal positions, post-LN encoder blocks, and a concatenated
// min | max | attentional pooling over the final block, L2-normalized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdm/autodiff.hpp"
#include "bdm/nn.hpp"
#include "bdm/parallel.hpp"
#include "bdm/parameter.hpp"
#include "bdm/ranking_loss.hpp"
#include "bdm/text.hpp"

namespace bdm {

struct EncoderConfig {
  std::size_t embed_dim = 32;
  std::size_t num_blocks = 2;
  std::size_t hidden_dim = 32;
  std::size_t filter_dim = 64;
  std::size_t num_heads = 2;
  VocabConfig vocab;
  /// Gradient multiplier of the word and char embedding tables.
  double embedding_grad_multiplier = 25.0;

  void validate() const {
    vocab.validate();
    if (embed_dim == 0 || hidden_dim == 0 || filter_dim == 0) throw ContractError("EncoderConfig: dims must be > 0");
    if (num_blocks < 1) throw ContractError("EncoderConfig: num_blocks must be >= 1");
    if (num_heads < 1 || hidden_dim % num_heads != 0) {
      throw ContractError("EncoderConfig: hidden_dim must be divisible by num_heads");
    }
    if (!(embedding_grad_multiplier > 0.0)) throw ContractError("EncoderConfig: grad multiplier must be > 0");
  }

  /// min | max | attention
  std::size_t output_dim() const { return 3 * hidden_dim; }

  static EncoderConfig desk() { return {}; }
  static EncoderConfig paper() { return {320, 3, 512, 2048, 8, VocabConfig::paper(), 25.0}; }
};

/// Sinusoidal position table, rows = positions.
inline Tensor2 sinusoidal_positions(std::size_t len, std::size_t dim) {
  Tensor2 pe(len, dim);
  for (std::size_t pos = 0; pos < len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) / rate;
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

/// [min | max | attention] over the first valid_rows rows of h. `query` is 1 x d;
/// attention weights are the softmax of h * query^T over positions.
inline Var pool_min_max_attention(Var h, Var query, std::size_t valid_rows) {
  Var mn = min_rows(h, valid_rows);
  Var mx = max_rows(h, valid_rows);
  Var weights = softmax_rows(transpose(matmul_nt(h, query)), valid_rows);
  Var att = matmul(weights, h);
  const Var parts[] = {mn, mx, att};
  return concat_cols(parts);
}

class SentenceEncoder {
 public:
  SentenceEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    word_table_ = store_.add_embedding("sent.word_table", cfg_.vocab.word_table_rows(), cfg_.embed_dim, rng,
                                       cfg_.embedding_grad_multiplier);
    char_table_ = store_.add_embedding("sent.char_table", cfg_.vocab.char_buckets, cfg_.embed_dim, rng,
                                       cfg_.embedding_grad_multiplier);
    input_proj_ = Dense(store_, "sent.input_proj", cfg_.embed_dim, cfg_.hidden_dim, rng);
    for (std::size_t b = 0; b < cfg_.num_blocks; ++b) {
      const std::string p = "sent.block" + std::to_string(b);
      blocks_.push_back(Block{Dense(store_, p + ".q", cfg_.hidden_dim, cfg_.hidden_dim, rng),
                              Dense(store_, p + ".k", cfg_.hidden_dim, cfg_.hidden_dim, rng),
                              Dense(store_, p + ".v", cfg_.hidden_dim, cfg_.hidden_dim, rng),
                              Dense(store_, p + ".o", cfg_.hidden_dim, cfg_.hidden_dim, rng),
                              LayerNorm(store_, p + ".ln1", cfg_.hidden_dim),
                              Dense(store_, p + ".ff1", cfg_.hidden_dim, cfg_.filter_dim, rng),
                              Dense(store_, p + ".ff2", cfg_.filter_dim, cfg_.hidden_dim, rng),
                              LayerNorm(store_, p + ".ln2", cfg_.hidden_dim)});
    }
    pool_query_ = store_.add_uniform("sent.pool_query", 1, cfg_.hidden_dim,
                                     1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim)), rng);
  }

  SentenceEncoder(SentenceEncoder&&) noexcept = default;
  SentenceEncoder& operator=(SentenceEncoder&&) noexcept = default;

  const EncoderConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  std::size_t output_dim() const { return cfg_.output_dim(); }

  /// Row t = word_table[word_ids[t]] + sum of char_table rows of token t; rows past
  /// the sequence (up to padded_len) are zero.
  Var embed_tokens(Tape& tape, const FeatureSequence& fs, std::size_t padded_len) const {
    if (fs.word_ids.size() != fs.char_ids.size()) throw ContractError("FeatureSequence: word/char length mismatch");
    padded_len = std::max(padded_len, fs.size());
    std::vector<std::vector<std::size_t>> words(padded_len), chars(padded_len);
    for (std::size_t t = 0; t < fs.size(); ++t) {
      words[t] = {fs.word_ids[t]};
      chars[t] = fs.char_ids[t];
    }
    Var w = gather_sum(tape.param(*word_table_), std::move(words));
    Var c = gather_sum(tape.param(*char_table_), std::move(chars));
    return add(w, c);
  }

  Tensor2 embed_tokens(const FeatureSequence& fs) const {
    Tape tape(false);
    return embed_tokens(tape, fs, fs.size()).value();
  }

  /// Pre-normalization pooled vector (1 x 3*hidden) for a sequence padded to padded_len.
  Var pooled(Tape& tape, const FeatureSequence& fs, std::size_t padded_len) const {
    if (fs.empty()) throw ContractError("sentence must contain >=1 token");
    padded_len = std::max(padded_len, fs.size());
    const std::size_t valid = fs.size();
    Var x = input_proj_(embed_tokens(tape, fs, padded_len));
    x = add(x, tape.constant(sinusoidal_positions(padded_len, cfg_.hidden_dim)));
    const std::size_t dh = cfg_.hidden_dim / cfg_.num_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (const Block& blk : blocks_) {
      Var q = blk.q(x), k = blk.k(x), v = blk.v(x);
      std::vector<Var> heads;
      heads.reserve(cfg_.num_heads);
      for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
        Var qh = slice_cols(q, h * dh, dh);
        Var kh = slice_cols(k, h * dh, dh);
        Var vh = slice_cols(v, h * dh, dh);
        Var probs = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), valid);
        heads.push_back(matmul(probs, vh));
      }
      Var attn = blk.o(cfg_.num_heads == 1 ? heads.front() : concat_cols(heads));
      x = blk.ln1(add(x, attn));
      Var ff = blk.ff2(relu(blk.ff1(x)));
      x = blk.ln2(add(x, ff));
    }
    return pool_min_max_attention(x, tape.param(*pool_query_), valid);
  }

  /// Unit-norm sentence embedding node (1 x 3*hidden).
  Var forward(Tape& tape, const FeatureSequence& fs, std::size_t padded_len = 0) const {
    return l2_normalize_rows(pooled(tape, fs, padded_len));
  }

  /// Embedding of one sentence as a 1 x output_dim row.
  Tensor2 encode(const FeatureSequence& fs) const {
    Tape tape(false);
    return forward(tape, fs).value();
  }

  /// Pads every sequence to the batch's longest; padded keys are masked out of
  /// attention and padded positions are excluded from pooling.
  Tensor2 encode_batch(std::span<const FeatureSequence> batch, std::size_t threads = 1) const {
    std::size_t max_len = 0;
    for (const auto& fs : batch) {
      if (fs.empty()) throw ContractError("sentence must contain >=1 token");
      max_len = std::max(max_len, fs.size());
    }
    Tensor2 out(batch.size(), output_dim());
    parallel_for(batch.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Tape tape(false);
        const Tensor2& row = forward(tape, batch[i], max_len).value();
        std::copy(row.values().begin(), row.values().end(), out.row(i).begin());
      }
    });
    return out;
  }

  /// Encodes without padding, one sequence at a time (used for large collections).
  Tensor2 encode_all(std::span<const FeatureSequence> items, std::size_t threads = 1) const {
    Tensor2 out(items.size(), output_dim());
    parallel_for(items.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Tape tape(false);
        const Tensor2& row = forward(tape, items[i]).value();
        std::copy(row.values().begin(), row.values().end(), out.row(i).begin());
      }
    });
    return out;
  }

 private:
  struct Block {
    Dense q, k, v, o;
    LayerNorm ln1;
    Dense ff1, ff2;
    LayerNorm ln2;
  };

  EncoderConfig cfg_;
  ParameterStore store_;
  Parameter* word_table_ = nullptr;
  Parameter* char_table_ = nullptr;
  Dense input_proj_;
  std::vector<Block> blocks_;
  Parameter* pool_query_ = nullptr;
};

// ---------------------------------------------------------------------------
// Training

using SentencePair = std::pair<FeatureSequence, FeatureSequence>;

struct SentenceTrainConfig {
  std::size_t steps = 600;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double margin = 0.3;
  /// Logit scale on cosine scores; 1 is the unscaled loss.
  double score_scale = 20.0;
  /// Hard negatives appended per source (0 disables); drawn from each item's
  /// top-5 mined non-gold neighbors, which are cached and re-mined periodically.
  std::size_t hard_negatives = 0;
  std::size_t hard_negative_refresh = 500;
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  void validate() const {
    if (batch_size < 1) throw ContractError("SentenceTrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ContractError("SentenceTrainConfig: learning_rate must be > 0");
    if (!(margin >= 0.0)) throw ContractError("SentenceTrainConfig: margin must be >= 0");
    if (hard_negatives > 5) throw ContractError("SentenceTrainConfig: at most 5 hard negatives per source");
    if (hard_negative_refresh < 1) throw ContractError("SentenceTrainConfig: hard_negative_refresh must be >= 1");
    if (!(score_scale > 0.0) || !std::isfinite(score_scale)) {
      throw ContractError("SentenceTrainConfig: score_scale must be finite and > 0");
    }
  }

  static SentenceTrainConfig desk() { return {}; }
  /// 40M steps, K=100, lr 0.003, m=0.3, five hard negatives.
  static SentenceTrainConfig paper() {
    SentenceTrainConfig c;
    c.steps = 40'000'000;
    c.batch_size = 100;
    c.learning_rate = 0.003;
    c.score_scale = 1.0;
    c.hard_negatives = 5;
    return c;
  }
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

namespace detail {

/// Deterministic epoch-shuffled batches of distinct indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), rng_(seed) {
    if (batch_ > n_) throw ContractError("batch size " + std::to_string(batch_) + " exceeds dataset size " + std::to_string(n_));
    order_.resize(n_);
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > n_) reshuffle();
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

/// For each query row, the `k` highest-scoring candidate rows other than its own index
/// and other than candidates whose features equal the gold's.
inline std::vector<std::vector<std::size_t>> top_non_gold(const Tensor2& queries, const Tensor2& cands,
                                                          const std::vector<SentencePair>& pairs, bool src_side,
                                                          std::size_t k) {
  std::vector<std::vector<std::size_t>> out(queries.rows());
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < queries.rows(); ++i) {
    const FeatureSequence& gold = src_side ? pairs[i].second : pairs[i].first;
    scored.clear();
    for (std::size_t j = 0; j < cands.rows(); ++j) {
      if (j == i) continue;
      scored.emplace_back(dot(queries.row(i), cands.row(j)), j);
    }
    const std::size_t take = std::min(k * 2 + 4, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t r = 0; r < take && out[i].size() < k; ++r) {
      const std::size_t j = scored[r].second;
      const FeatureSequence& cand = src_side ? pairs[j].second : pairs[j].first;
      if (cand == gold) continue;
      out[i].push_back(j);
    }
  }
  return out;
}

}  // namespace detail

struct TrainLog {
  std::vector<double> losses;
};

/// Minimizes the bidirectional additive-margin loss over in-batch negatives with SGD.
inline TrainLog train_sentence_encoder(SentenceEncoder& enc, const std::vector<SentencePair>& pairs,
                                       const SentenceTrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  TrainLog log;
  if (cfg.steps == 0) return log;
  if (pairs.empty()) throw ContractError("train_sentence_encoder: no training pairs");
  const std::size_t k = std::min(cfg.batch_size, pairs.size());
  detail::BatchSampler sampler(pairs.size(), k, cfg.seed);
  const SgdConfig sgd{cfg.learning_rate, k};
  const LossConfig loss_cfg{cfg.margin, k, cfg.score_scale};

  std::vector<FeatureSequence> srcs, tgts;
  if (cfg.hard_negatives > 0) {
    for (const auto& p : pairs) {
      srcs.push_back(p.first);
      tgts.push_back(p.second);
    }
  }
  Tensor2 src_cache, tgt_cache;
  std::vector<std::vector<std::size_t>> hard_for_src, hard_for_tgt;

  log.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const bool use_hard = cfg.hard_negatives > 0 && step >= cfg.hard_negative_refresh;
    if (use_hard && step % cfg.hard_negative_refresh == 0) {
      src_cache = enc.encode_all(srcs, cfg.threads);
      tgt_cache = enc.encode_all(tgts, cfg.threads);
      hard_for_src = detail::top_non_gold(src_cache, tgt_cache, pairs, true, 5);
      hard_for_tgt = detail::top_non_gold(tgt_cache, src_cache, pairs, false, 5);
    }
    const auto batch = sampler.next();
    Tape tape;
    std::vector<Var> src_rows, tgt_rows;
    src_rows.reserve(k);
    tgt_rows.reserve(k);
    for (std::size_t idx : batch) {
      src_rows.push_back(enc.forward(tape, pairs[idx].first));
      tgt_rows.push_back(enc.forward(tape, pairs[idx].second));
    }
    Var src = concat_rows(src_rows);
    Var tgt = concat_rows(tgt_rows);
    std::optional<Var> hard_fwd, hard_bwd;
    if (use_hard) {
      auto gather = [&](const std::vector<std::vector<std::size_t>>& hard, const Tensor2& cache) {
        std::vector<double> rows;
        std::size_t count = 0;
        for (std::size_t idx : batch) {
          auto cands = hard[idx];
          std::shuffle(cands.begin(), cands.end(), sampler.rng());
          for (std::size_t h = 0; h < std::min(cfg.hard_negatives, cands.size()); ++h) {
            auto r = cache.row(cands[h]);
            rows.insert(rows.end(), r.begin(), r.end());
            ++count;
          }
        }
        return Tensor2(count, cache.cols(), std::move(rows));
      };
      Tensor2 hf = gather(hard_for_src, tgt_cache);
      Tensor2 hb = gather(hard_for_tgt, src_cache);
      if (hf.rows() > 0) hard_fwd = tape.constant(std::move(hf));
      if (hb.rows() > 0) hard_bwd = tape.constant(std::move(hb));
    }
    Var loss = bidirectional_loss(src, tgt, hard_fwd, hard_bwd, loss_cfg);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) throw TrainingError("non-finite sentence loss at step " + std::to_string(step));
    tape.backward(loss);
    sgd_step(enc.params().all(), sgd);
    log.losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  return log;
}

}  // namespace bdm
