#pragma once

// End-to-end pipelines shared by the CLI and the acceptance suite: vocabulary
// and sentence-pair extraction, sentence-level P@1, composer training and
// document retrieval evaluation, and the degraded-encoder robustness sweep.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bdm/corpus.hpp"
#include "bdm/doc_composer.hpp"
#include "bdm/mining.hpp"
#include "bdm/sentence_encoder.hpp"
#include "bdm/text.hpp"

namespace bdm {

struct SentenceModel {
  Vocabulary vocab;
  SentenceEncoder encoder;

  FeatureSequence features(const std::string& text) const {
    return featurize(tokenize(text), vocab, encoder.config().vocab);
  }
};

/// Vocabulary over both sides of the given pairs' documents.
inline Vocabulary build_vocabulary(const Corpus& corpus, const std::vector<DocumentPair>& pairs, std::size_t vocab_size) {
  const auto idx = corpus.index();
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& p : pairs) {
    for (const auto* id : {&p.src_id, &p.tgt_id}) {
      for (const auto& s : corpus.documents.at(idx.at(*id)).sentences) tokenized.push_back(tokenize(s));
    }
  }
  return Vocabulary::build(tokenized, vocab_size);
}

using TextPair = std::pair<std::string, std::string>;

/// Sentence pairs from documents whose sentence counts agree, zipped in order.
inline std::vector<TextPair> aligned_sentence_pairs(const Corpus& corpus, const std::vector<DocumentPair>& pairs) {
  const auto idx = corpus.index();
  std::vector<TextPair> out;
  for (const auto& p : pairs) {
    const auto& s = corpus.documents.at(idx.at(p.src_id)).sentences;
    const auto& t = corpus.documents.at(idx.at(p.tgt_id)).sentences;
    if (s.size() != t.size()) continue;
    for (std::size_t i = 0; i < s.size(); ++i) out.emplace_back(s[i], t[i]);
  }
  return out;
}

inline std::vector<SentencePair> featurize_pairs(const SentenceModel& model, const std::vector<TextPair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& [s, t] : pairs) {
    auto fs = model.features(s);
    auto ft = model.features(t);
    if (fs.empty() || ft.empty()) continue;
    out.emplace_back(std::move(fs), std::move(ft));
  }
  return out;
}

/// Exact-search sentence retrieval P@N. Each source of `queries` is scored against
/// the targets of `queries` plus the `distractors` target sentences.
inline EvalReport sentence_retrieval(const SentenceModel& model, const std::vector<TextPair>& queries,
                                     const std::vector<std::string>& distractors = {}, std::size_t threads = 1) {
  std::vector<FeatureSequence> src, tgt;
  std::vector<std::string> src_ids, tgt_ids;
  std::vector<DocumentPair> gold;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    src.push_back(model.features(queries[i].first));
    tgt.push_back(model.features(queries[i].second));
    src_ids.push_back(detail::pad_id("s", i));
    tgt_ids.push_back(detail::pad_id("t", i));
    gold.push_back({src_ids.back(), tgt_ids.back()});
  }
  for (std::size_t i = 0; i < distractors.size(); ++i) {
    tgt.push_back(model.features(distractors[i]));
    tgt_ids.push_back(detail::pad_id("d", i));
  }
  const Tensor2 se = model.encoder.encode_all(src, threads);
  const EmbeddingIndex index(tgt_ids, model.encoder.encode_all(tgt, threads), IndexMode::exact);
  return evaluate_pn(gold, index, src_ids, se, {1, 3, 10}, threads);
}

/// Held-out aligned sentence pairs and, as distractors, every other aligned target
/// sentence of the corpus.
struct SentenceEvalSet {
  std::vector<TextPair> queries;
  std::vector<std::string> distractors;
};

inline SentenceEvalSet sentence_eval_set(const Corpus& corpus, const std::vector<SplitPart>& query_parts) {
  SentenceEvalSet set;
  for (const auto& p : corpus.pairs) {
    const bool held_out = std::find(query_parts.begin(), query_parts.end(), split_of(p)) != query_parts.end();
    for (auto& tp : aligned_sentence_pairs(corpus, {p})) {
      if (held_out) set.queries.push_back(std::move(tp));
      else set.distractors.push_back(std::move(tp.second));
    }
  }
  return set;
}

/// Composer inputs for every document of a corpus.
struct DocumentInputs {
  std::vector<std::string> ids;
  std::vector<DocumentInput> inputs;
  std::unordered_map<std::string, std::size_t> index;

  const DocumentInput& at(const std::string& id) const { return inputs.at(index.at(id)); }
};

inline DocumentInputs document_inputs(const Corpus& corpus, const SentenceModel& model, bool with_sentences,
                                      bool with_tokens, std::size_t threads = 1) {
  DocumentInputs out;
  std::vector<FeatureSequence> all_sents;
  std::vector<std::size_t> owner;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    const auto& doc = corpus.documents[d];
    out.ids.push_back(doc.id);
    out.index.emplace(doc.id, d);
    DocumentInput in;
    for (const auto& s : doc.sentences) {
      auto fs = model.features(s);
      if (fs.empty()) continue;
      if (with_tokens) {
        in.tokens.word_ids.insert(in.tokens.word_ids.end(), fs.word_ids.begin(), fs.word_ids.end());
        in.tokens.char_ids.insert(in.tokens.char_ids.end(), fs.char_ids.begin(), fs.char_ids.end());
      }
      if (with_sentences) {
        all_sents.push_back(std::move(fs));
        owner.push_back(d);
      }
    }
    out.inputs.push_back(std::move(in));
  }
  if (with_sentences) {
    const Tensor2 embs = model.encoder.encode_all(all_sents, threads);
    std::vector<std::size_t> counts(corpus.documents.size(), 0);
    for (std::size_t d : owner) ++counts[d];
    for (std::size_t d = 0; d < counts.size(); ++d) out.inputs[d].sentence_embeddings = Tensor2(counts[d], embs.cols());
    std::vector<std::size_t> fill(corpus.documents.size(), 0);
    for (std::size_t i = 0; i < owner.size(); ++i) {
      auto src = embs.row(i);
      std::copy(src.begin(), src.end(), out.inputs[owner[i]].sentence_embeddings.row(fill[owner[i]]++).begin());
    }
  }
  return out;
}

struct DocExperimentConfig {
  std::vector<ComposerKind> kinds{std::begin(kAllComposers), std::end(kAllComposers)};
  DocTrainConfig train;
  std::vector<std::size_t> hidden_dims{32, 32, 64, 64};
  double margin = 0.5;
  /// Token-embedding width of the BoW DAN table.
  std::size_t bow_dim = 32;
  std::uint64_t seed = 11;
  std::size_t threads = 1;
  /// Queries come from these splits; candidates are every target document.
  std::vector<SplitPart> eval_parts{SplitPart::test};
};

struct ComposerResult {
  ComposerKind kind;
  EvalReport report;
  TrainLog log;
};

inline std::vector<DocumentPair> pairs_in(const Corpus& c, const std::vector<SplitPart>& parts) {
  std::vector<DocumentPair> out;
  for (const auto& p : c.pairs)
    if (std::find(parts.begin(), parts.end(), split_of(p)) != parts.end()) out.push_back(p);
  return out;
}

/// Document retrieval with one trained composer: queries are held-out sources,
/// candidates are all target documents of the corpus.
inline EvalReport evaluate_composer(const Corpus& corpus, const DocumentInputs& inputs, const DocComposer& composer,
                                    const std::vector<SplitPart>& eval_parts, std::size_t threads) {
  const auto held_out = pairs_in(corpus, eval_parts);
  std::vector<std::string> tgt_ids, src_ids;
  std::vector<DocumentInput> tgt_in, src_in;
  for (const auto& p : corpus.pairs) {
    tgt_ids.push_back(p.tgt_id);
    tgt_in.push_back(inputs.at(p.tgt_id));
  }
  for (const auto& p : held_out) {
    src_ids.push_back(p.src_id);
    src_in.push_back(inputs.at(p.src_id));
  }
  const EmbeddingIndex index(tgt_ids, composer.compose_all(tgt_in, threads), IndexMode::exact);
  return evaluate_pn(held_out, index, src_ids, composer.compose_all(src_in, threads), {1, 3, 10}, threads);
}

inline DocComposer make_composer(ComposerKind kind, const SentenceModel& model, const DocExperimentConfig& cfg) {
  DocComposerConfig dc;
  dc.kind = kind;
  dc.hidden_dims = cfg.hidden_dims;
  dc.margin = cfg.margin;
  dc.input_dim = kind == ComposerKind::bow_dan ? cfg.bow_dim : model.encoder.output_dim();
  dc.vocab_rows = model.encoder.config().vocab.word_table_rows();
  return DocComposer(dc, cfg.seed + static_cast<std::uint64_t>(kind));
}

/// Trains every requested composer on the training split and evaluates it.
inline std::vector<ComposerResult> run_doc_experiment(const Corpus& corpus, const SentenceModel& model,
                                                      const DocExperimentConfig& cfg,
                                                      std::vector<DocComposer>* trained = nullptr) {
  bool need_sent = false, need_tok = false;
  for (ComposerKind k : cfg.kinds) (uses_sentences(k) ? need_sent : need_tok) = true;
  const DocumentInputs inputs = document_inputs(corpus, model, need_sent, need_tok, cfg.threads);
  std::vector<DocumentInputPair> train;
  for (const auto& p : pairs_in(corpus, SplitPart::train)) train.emplace_back(inputs.at(p.src_id), inputs.at(p.tgt_id));

  std::vector<ComposerResult> results;
  for (ComposerKind kind : cfg.kinds) {
    DocComposer composer = make_composer(kind, model, cfg);
    DocTrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + static_cast<std::uint64_t>(kind);
    TrainLog log = train_doc_composer(composer, train, tc);
    results.push_back({kind, evaluate_composer(corpus, inputs, composer, cfg.eval_parts, cfg.threads), std::move(log)});
    if (trained) trained->push_back(std::move(composer));
  }
  return results;
}

inline const ComposerResult& result_for(const std::vector<ComposerResult>& rs, ComposerKind k) {
  for (const auto& r : rs)
    if (r.kind == k) return r;
  throw ContractError("no result for composer " + to_string(k));
}

/// Trains a sentence model from scratch on the aligned training-split sentences.
inline SentenceModel train_sentence_model(const Corpus& corpus, const EncoderConfig& enc_cfg,
                                          const SentenceTrainConfig& train_cfg, std::uint64_t init_seed,
                                          const StepCallback& on_step = {}) {
  const auto train_pairs = pairs_in(corpus, SplitPart::train);
  SentenceModel model{build_vocabulary(corpus, train_pairs, enc_cfg.vocab.vocab_size), SentenceEncoder(enc_cfg, init_seed)};
  const auto text_pairs = aligned_sentence_pairs(corpus, train_pairs);
  train_sentence_encoder(model.encoder, featurize_pairs(model, text_pairs), train_cfg, on_step);
  return model;
}

// ---------------------------------------------------------------------------
// Robustness sweep

struct EncoderVariant {
  std::string name;
  SentenceTrainConfig train;
};

struct SweepRow {
  std::string name;
  double sentence_p1 = 0.0;
  std::map<ComposerKind, double> doc_p1;
};

/// For each encoder variant: train on `sentence_corpus`, measure held-out sentence
/// P@1 there against all of its aligned target sentences, then train and evaluate
/// the composers on `doc_corpus`. Rows are sorted by sentence P@1, best first.
inline std::vector<SweepRow> robustness_sweep(const Corpus& sentence_corpus, const Corpus& doc_corpus,
                                              const EncoderConfig& enc_cfg, const std::vector<EncoderVariant>& variants,
                                              const DocExperimentConfig& doc_cfg, std::uint64_t init_seed,
                                              const std::function<void(const SweepRow&)>& on_row = {}) {
  if (variants.size() < 2) throw ContractError("robustness_sweep: need >= 2 encoder configurations");
  const SentenceEvalSet held_out = sentence_eval_set(sentence_corpus, doc_cfg.eval_parts);
  std::vector<SweepRow> rows;
  for (const auto& v : variants) {
    const SentenceModel model = train_sentence_model(sentence_corpus, enc_cfg, v.train, init_seed);
    SweepRow row{v.name, sentence_retrieval(model, held_out.queries, held_out.distractors, doc_cfg.threads).at(1), {}};
    for (const auto& r : run_doc_experiment(doc_corpus, model, doc_cfg)) row.doc_p1[r.kind] = r.report.at(1);
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.sentence_p1 > b.sentence_p1; });
  return rows;
}

}  // namespace bdm
