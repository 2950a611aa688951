#pragma once

// Document embeddings from four composers:
//   sentence_avg   mean of frozen sentence embeddings
//   bow_dan        deep averaging network over document unigrams
//   hide_dnn_pool  adapter DNN on each sentence embedding, then average pooling
//   hide_pool_dnn  average pooling, then the adapter DNN
// Every output is L2-normalized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdm/autodiff.hpp"
#include "bdm/nn.hpp"
#include "bdm/parallel.hpp"
#include "bdm/ranking_loss.hpp"
#include "bdm/sentence_encoder.hpp"
#include "bdm/text.hpp"

namespace bdm {

enum class ComposerKind { sentence_avg, bow_dan, hide_dnn_pool, hide_pool_dnn };

inline constexpr ComposerKind kAllComposers[] = {ComposerKind::sentence_avg, ComposerKind::bow_dan,
                                                 ComposerKind::hide_dnn_pool, ComposerKind::hide_pool_dnn};

inline std::string to_string(ComposerKind k) {
  switch (k) {
    case ComposerKind::sentence_avg: return "sentence_avg";
    case ComposerKind::bow_dan: return "bow_dan";
    case ComposerKind::hide_dnn_pool: return "hide_dnn_pool";
    case ComposerKind::hide_pool_dnn: return "hide_pool_dnn";
  }
  return "?";
}

inline ComposerKind parse_composer_kind(const std::string& s) {
  for (ComposerKind k : kAllComposers)
    if (to_string(k) == s) return k;
  throw ContractError("unknown composer kind '" + s + "'");
}

inline bool uses_sentences(ComposerKind k) { return k != ComposerKind::bow_dan; }
inline bool is_trained(ComposerKind k) { return k != ComposerKind::sentence_avg; }

struct DocComposerConfig {
  ComposerKind kind = ComposerKind::hide_dnn_pool;
  std::vector<std::size_t> hidden_dims{32, 32, 64, 64};
  /// Document-level additive margin.
  double margin = 0.5;
  /// Sentence-embedding width (HiDE) or token-embedding width (BoW DAN).
  std::size_t input_dim = 96;
  /// Token table rows for BoW DAN.
  std::size_t vocab_rows = 2100;
  /// Gradient multiplier of the BoW DAN token table.
  double embedding_grad_multiplier = 25.0;

  void validate() const {
    if (is_trained(kind) && hidden_dims.empty()) throw ContractError("DocComposerConfig: hidden_dims must be non-empty");
    if (!(margin >= 0.0)) throw ContractError("DocComposerConfig: margin must be >= 0");
    if (input_dim == 0) throw ContractError("DocComposerConfig: input_dim must be > 0");
    if (kind == ComposerKind::bow_dan && vocab_rows == 0) throw ContractError("DocComposerConfig: vocab_rows must be > 0");
  }

  static DocComposerConfig desk(ComposerKind kind, std::size_t input_dim, std::size_t vocab_rows = 2100) {
    return {kind, {32, 32, 64, 64}, 0.5, input_dim, vocab_rows, 25.0};
  }
  static DocComposerConfig paper(ComposerKind kind, std::size_t input_dim, std::size_t vocab_rows = 210000) {
    return {kind, {320, 320, 500, 500}, 0.5, input_dim, vocab_rows, 25.0};
  }
};

struct DocumentEmbedding {
  std::vector<double> vector;
  ComposerKind composer_kind = ComposerKind::sentence_avg;
};

/// What a composer consumes for one document: frozen sentence embeddings
/// (one row per sentence) and/or the document's unigram features.
struct DocumentInput {
  Tensor2 sentence_embeddings;
  FeatureSequence tokens;
};

/// Mean of the rows in index order, L2-normalized.
inline DocumentEmbedding compose_sentence_avg(const Tensor2& sent_embs) {
  if (sent_embs.rows() == 0) throw ContractError("compose_sentence_avg: empty document");
  std::vector<double> mean(sent_embs.cols(), 0.0);
  for (std::size_t r = 0; r < sent_embs.rows(); ++r)
    for (std::size_t c = 0; c < sent_embs.cols(); ++c) mean[c] += sent_embs(r, c);
  const double inv = 1.0 / static_cast<double>(sent_embs.rows());
  for (double& v : mean) v *= inv;
  const double n = l2_norm(mean);
  if (!(n > 0.0)) throw ContractError("compose_sentence_avg: mean embedding is zero");
  for (double& v : mean) v /= n;
  return {std::move(mean), ComposerKind::sentence_avg};
}

class DocComposer {
 public:
  DocComposer(const DocComposerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    if (cfg_.kind == ComposerKind::bow_dan) {
      token_table_ = store_.add_embedding("doc.token_table", cfg_.vocab_rows, cfg_.input_dim, rng,
                                         cfg_.embedding_grad_multiplier);
    }
    if (is_trained(cfg_.kind)) dnn_ = ResidualDnn(store_, "doc.dnn", cfg_.input_dim, cfg_.hidden_dims, rng);
  }

  DocComposer(DocComposer&&) noexcept = default;
  DocComposer& operator=(DocComposer&&) noexcept = default;

  const DocComposerConfig& config() const { return cfg_; }
  ComposerKind kind() const { return cfg_.kind; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  std::size_t output_dim() const { return is_trained(cfg_.kind) ? dnn_.output_dim() : cfg_.input_dim; }

  /// Unit-norm 1 x output_dim document embedding node.
  Var forward(Tape& tape, const DocumentInput& doc) const {
    const DocumentInput* one[] = {&doc};
    return forward_batch(tape, one);
  }

  /// One unit-norm row per document. Rows are identical to forward() on each
  /// document alone; batching only shares the adapter's matrix products.
  Var forward_batch(Tape& tape, std::span<const DocumentInput* const> docs) const {
    if (docs.empty()) throw ContractError("DocComposer: empty batch");
    if (cfg_.kind == ComposerKind::bow_dan) {
      std::vector<std::vector<std::size_t>> ids;
      Tensor2 inv(docs.size(), cfg_.input_dim);
      for (std::size_t d = 0; d < docs.size(); ++d) {
        if (docs[d]->tokens.empty()) throw ContractError("compose_bow_dan: empty document");
        ids.push_back(docs[d]->tokens.word_ids);
        std::sort(ids.back().begin(), ids.back().end());
        for (double& v : inv.row(d)) v = 1.0 / static_cast<double>(ids.back().size());
      }
      Var mean = mul(gather_sum(tape.param(*token_table_), std::move(ids)), tape.constant(std::move(inv)));
      return l2_normalize_rows(dnn_(mean));
    }
    std::vector<std::size_t> offsets{0};
    for (const DocumentInput* d : docs) {
      check_sentences(*d);
      offsets.push_back(offsets.back() + d->sentence_embeddings.rows());
    }
    Tensor2 stacked(offsets.back(), cfg_.input_dim);
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const auto& src = docs[d]->sentence_embeddings.values();
      std::copy(src.begin(), src.end(), stacked.row(offsets[d]).begin());
    }
    Var rows = tape.constant(std::move(stacked));
    switch (cfg_.kind) {
      case ComposerKind::sentence_avg: return l2_normalize_rows(segment_mean_rows(rows, std::move(offsets)));
      case ComposerKind::hide_dnn_pool: return l2_normalize_rows(segment_mean_rows(dnn_(rows), std::move(offsets)));
      case ComposerKind::hide_pool_dnn: return l2_normalize_rows(dnn_(segment_mean_rows(rows, std::move(offsets))));
      case ComposerKind::bow_dan: break;
    }
    throw ContractError("unknown composer kind");
  }

  DocumentEmbedding compose(const DocumentInput& doc) const {
    Tape tape(false);
    const Tensor2& v = forward(tape, doc).value();
    return {v.values(), cfg_.kind};
  }

  /// One row per document.
  Tensor2 compose_all(std::span<const DocumentInput> docs, std::size_t threads = 1) const {
    constexpr std::size_t kChunk = 64;
    Tensor2 out(docs.size(), output_dim());
    const std::size_t chunks = (docs.size() + kChunk - 1) / kChunk;
    parallel_for(chunks, threads, [&](std::size_t b, std::size_t e) {
      std::vector<const DocumentInput*> batch;
      for (std::size_t c = b; c < e; ++c) {
        batch.clear();
        for (std::size_t i = c * kChunk; i < std::min(docs.size(), (c + 1) * kChunk); ++i) batch.push_back(&docs[i]);
        Tape tape(false);
        const Tensor2& rows = forward_batch(tape, batch).value();
        std::copy(rows.values().begin(), rows.values().end(), out.row(c * kChunk).begin());
      }
    });
    return out;
  }

 private:
  void check_sentences(const DocumentInput& doc) const {
    const Tensor2& s = doc.sentence_embeddings;
    if (s.rows() == 0) throw ContractError("document must contain >=1 sentence");
    if (s.cols() != cfg_.input_dim) {
      throw ContractError("sentence embeddings have dim " + std::to_string(s.cols()) + " but composer input_dim is " +
                          std::to_string(cfg_.input_dim));
    }
  }

  DocComposerConfig cfg_;
  ParameterStore store_;
  Parameter* token_table_ = nullptr;
  ResidualDnn dnn_;
};

inline DocumentEmbedding compose_bow_dan(const FeatureSequence& doc_tokens, const DocComposer& composer) {
  if (composer.kind() != ComposerKind::bow_dan) throw ContractError("compose_bow_dan: composer is not bow_dan");
  return composer.compose(DocumentInput{Tensor2{}, doc_tokens});
}

inline DocumentEmbedding compose_hide(const Tensor2& sent_embs, const DocComposer& composer) {
  if (composer.kind() != ComposerKind::hide_dnn_pool && composer.kind() != ComposerKind::hide_pool_dnn) {
    throw ContractError("compose_hide: composer is not a HiDE variant");
  }
  return composer.compose(DocumentInput{sent_embs, {}});
}

// ---------------------------------------------------------------------------
// Training on the document ranking task

using DocumentInputPair = std::pair<DocumentInput, DocumentInput>;

struct DocTrainConfig {
  std::size_t steps = 1500;
  std::size_t batch_size = 32;
  double learning_rate = 0.005;
  double score_scale = 20.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ContractError("DocTrainConfig: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ContractError("DocTrainConfig: learning_rate must be > 0");
    if (!(score_scale > 0.0) || !std::isfinite(score_scale)) {
      throw ContractError("DocTrainConfig: score_scale must be finite and > 0");
    }
  }

  static DocTrainConfig desk() { return {}; }
  /// 5M steps, K=200, lr 0.0001.
  static DocTrainConfig paper() { return {5'000'000, 200, 0.0001, 1.0, 1}; }
};

/// Minimizes the bidirectional loss over document embeddings with the composer's
/// margin. Sentence embeddings inside the inputs are constants. sentence_avg has no
/// parameters and returns an empty log.
inline TrainLog train_doc_composer(DocComposer& composer, const std::vector<DocumentInputPair>& pairs,
                                   const DocTrainConfig& cfg, const StepCallback& on_step = {}) {
  cfg.validate();
  TrainLog log;
  if (!is_trained(composer.kind()) || cfg.steps == 0) return log;
  if (pairs.empty()) throw ContractError("train_doc_composer: empty corpus");
  const std::size_t k = std::min(cfg.batch_size, pairs.size());
  detail::BatchSampler sampler(pairs.size(), k, cfg.seed);
  const SgdConfig sgd{cfg.learning_rate, k};
  const LossConfig loss_cfg{composer.config().margin, k, cfg.score_scale};
  log.losses.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto batch = sampler.next();
    Tape tape;
    std::vector<const DocumentInput*> src_docs, tgt_docs;
    for (std::size_t idx : batch) {
      src_docs.push_back(&pairs[idx].first);
      tgt_docs.push_back(&pairs[idx].second);
    }
    Var loss = bidirectional_loss(composer.forward_batch(tape, src_docs), composer.forward_batch(tape, tgt_docs),
                                  std::nullopt, std::nullopt, loss_cfg);
    const double lv = loss.value().item();
    if (!std::isfinite(lv)) throw TrainingError("non-finite document loss at step " + std::to_string(step));
    tape.backward(loss);
    sgd_step(composer.params().all(), sgd);
    log.losses.push_back(lv);
    if (on_step) on_step(step, lv);
  }
  return log;
}

}  // namespace bdm
