// bdm: command-line pipeline over the bdm library.
//
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bdm/bdm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bdm;

namespace {

/// Raised for configuration problems found after flag parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path.string());
  os << text;
}

json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of integers, got '" + s + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Model directories

json to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"num_blocks", c.num_blocks},
          {"hidden_dim", c.hidden_dim},
          {"filter_dim", c.filter_dim},
          {"num_heads", c.num_heads},
          {"embedding_grad_multiplier", c.embedding_grad_multiplier},
          {"vocab",
           {{"vocab_size", c.vocab.vocab_size},
            {"oov_buckets", c.vocab.oov_buckets},
            {"char_ngram_min", c.vocab.char_ngram_min},
            {"char_ngram_max", c.vocab.char_ngram_max},
            {"char_buckets", c.vocab.char_buckets}}}};
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  c.embed_dim = j.at("embed_dim");
  c.num_blocks = j.at("num_blocks");
  c.hidden_dim = j.at("hidden_dim");
  c.filter_dim = j.at("filter_dim");
  c.num_heads = j.at("num_heads");
  c.embedding_grad_multiplier = j.at("embedding_grad_multiplier");
  const json& v = j.at("vocab");
  c.vocab = {v.at("vocab_size"), v.at("oov_buckets"), v.at("char_ngram_min"), v.at("char_ngram_max"), v.at("char_buckets")};
  return c;
}

json to_json(const DocComposerConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"hidden_dims", c.hidden_dims},
          {"margin", c.margin},
          {"input_dim", c.input_dim},
          {"vocab_rows", c.vocab_rows},
          {"embedding_grad_multiplier", c.embedding_grad_multiplier}};
}

DocComposerConfig composer_from_json(const json& j) {
  DocComposerConfig c;
  c.kind = parse_composer_kind(j.at("kind"));
  c.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  c.margin = j.at("margin");
  c.input_dim = j.at("input_dim");
  c.vocab_rows = j.at("vocab_rows");
  c.embedding_grad_multiplier = j.at("embedding_grad_multiplier");
  return c;
}

void save_sentence_model(const SentenceModel& m, const fs::path& dir) {
  write_text(dir / "encoder.json", to_json(m.encoder.config()).dump(2) + "\n");
  m.vocab.save((dir / "vocab.txt").string());
  save_checkpoint(m.encoder.params(), (dir / "sentence.ckpt").string());
}

SentenceModel load_sentence_model(const fs::path& dir) {
  const EncoderConfig cfg = encoder_from_json(read_json((dir / "encoder.json").string()));
  SentenceModel m{Vocabulary::load((dir / "vocab.txt").string()), SentenceEncoder(cfg, 0)};
  load_checkpoint(m.encoder.params(), (dir / "sentence.ckpt").string());
  return m;
}

void save_doc_model(const DocComposer& c, const fs::path& dir) {
  write_text(dir / "composer.json", to_json(c.config()).dump(2) + "\n");
  save_checkpoint(c.params(), (dir / "doc.ckpt").string());
}

DocComposer load_doc_model(const fs::path& dir) {
  DocComposer c(composer_from_json(read_json((dir / "composer.json").string())), 0);
  load_checkpoint(c.params(), (dir / "doc.ckpt").string());
  return c;
}

void write_log(const TrainLog& log, const fs::path& path) {
  std::ostringstream os;
  os << "step,loss\n";
  for (std::size_t i = 0; i < log.losses.size(); ++i) os << i << ',' << log.losses[i] << '\n';
  write_text(path, os.str());
}

// ---------------------------------------------------------------------------
// Run context: seed, threads, output directory and manifest

struct Common {
  std::string preset = "desk";
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::string out;
};

class Run {
 public:
  Run(const CLI::App& cmd, const Common& common, std::vector<std::string> inputs)
      : cmd_(cmd), common_(common), inputs_(std::move(inputs)) {}

  std::uint64_t seed() const { return common_.seed.value_or(7); }
  std::size_t threads() const { return common_.threads; }
  bool paper() const { return common_.preset == "paper"; }
  fs::path out(const std::string& name) const { return fs::path(common_.out) / name; }

  /// Creates the output directory and writes the manifest before any work.
  void begin() {
    fs::create_directories(common_.out);
    manifest_ = {{"command", cmd_.get_name()}, {"preset", common_.preset}, {"seed", seed()}, {"threads", threads()}};
    json cfg = json::object();
    for (const CLI::Option* o : cmd_.get_options()) {
      if (o->get_name().empty() || o->get_name() == "--help") continue;
      const std::string key = o->get_name();
      if (o->count() > 0) {
        cfg[key] = o->as<std::string>();
      } else if (!o->get_default_str().empty()) {
        cfg[key] = o->get_default_str();
      }
    }
    manifest_["config"] = cfg;
    json in = json::object();
    for (const auto& p : inputs_) {
      if (p.empty()) continue;
      in[p] = fs::is_directory(p) ? json(dir_checksums(p)) : json(file_checksum(p));
    }
    manifest_["inputs"] = in;
    manifest_["status"] = "running";
    flush();
  }

  void output(const fs::path& p) { outputs_.push_back(p); }

  void finish() {
    json outs = json::object();
    for (const auto& p : outputs_) outs[p.filename().string()] = file_checksum(p.string());
    manifest_["outputs"] = outs;
    manifest_["status"] = "ok";
    flush();
  }

 private:
  static json dir_checksums(const fs::path& dir) {
    json j = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) j[f.filename().string()] = file_checksum(f.string());
    return j;
  }

  void flush() const { write_text(fs::path(common_.out) / "manifest.json", manifest_.dump(2) + "\n"); }

  const CLI::App& cmd_;
  const Common& common_;
  std::vector<std::string> inputs_;
  json manifest_;
  std::vector<fs::path> outputs_;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--preset", c.preset, "hyperparameter preset")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
  cmd->add_option("--seed", c.seed, "run seed (falls back to BDM_SEED, then 7)")->envname("BDM_SEED");
  cmd->add_option("--threads", c.threads, "worker threads; 1 is bitwise deterministic")->check(CLI::PositiveNumber)->capture_default_str();
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) o->required();
}

// Optional hyperparameter overrides on top of a preset.
struct SentenceFlags {
  std::optional<std::size_t> steps, batch, hard_negatives;
  std::optional<double> lr, margin, scale;

  void add(CLI::App* cmd) {
    cmd->add_option("--steps", steps, "sentence encoder SGD steps");
    cmd->add_option("--batch", batch, "sentence batch size K");
    cmd->add_option("--lr", lr, "sentence learning rate");
    cmd->add_option("--margin", margin, "sentence additive margin");
    cmd->add_option("--scale", scale, "logit scale on cosine scores");
    cmd->add_option("--hard-negatives", hard_negatives, "hard negatives per source (0-5)");
  }

  SentenceTrainConfig resolve(const Run& run) const {
    SentenceTrainConfig c = run.paper() ? SentenceTrainConfig::paper() : SentenceTrainConfig::desk();
    if (steps) c.steps = *steps;
    if (batch) c.batch_size = *batch;
    if (lr) c.learning_rate = *lr;
    if (margin) c.margin = *margin;
    if (scale) c.score_scale = *scale;
    if (hard_negatives) c.hard_negatives = *hard_negatives;
    c.seed = run.seed();
    c.threads = run.threads();
    return c;
  }
};

struct DocFlags {
  std::optional<std::size_t> steps, batch;
  std::optional<double> lr, margin, scale;

  void add(CLI::App* cmd, const std::string& prefix = "") {
    cmd->add_option("--" + prefix + "steps", steps, "document SGD steps");
    cmd->add_option("--" + prefix + "batch", batch, "document batch size K");
    cmd->add_option("--" + prefix + "lr", lr, "document learning rate");
    cmd->add_option("--" + prefix + "margin", margin, "document additive margin");
    cmd->add_option("--" + prefix + "scale", scale, "logit scale on cosine scores");
  }

  DocExperimentConfig resolve(const Run& run) const {
    DocExperimentConfig c;
    c.train = run.paper() ? DocTrainConfig::paper() : DocTrainConfig::desk();
    if (run.paper()) c.hidden_dims = DocComposerConfig::paper(ComposerKind::hide_dnn_pool, 1).hidden_dims;
    if (steps) c.train.steps = *steps;
    if (batch) c.train.batch_size = *batch;
    if (lr) c.train.learning_rate = *lr;
    if (scale) c.train.score_scale = *scale;
    if (margin) c.margin = *margin;
    c.train.seed = run.seed();
    c.seed = run.seed() + 11;
    c.threads = run.threads();
    return c;
  }
};

EncoderConfig encoder_for(const Run& run) { return run.paper() ? EncoderConfig::paper() : EncoderConfig::desk(); }

struct CorpusFlags {
  std::string docs, pairs;

  void add(CLI::App* cmd, bool pairs_required = true) {
    cmd->add_option("--docs", docs, "documents (JSON Lines)")->required()->check(CLI::ExistingFile);
    auto* p = cmd->add_option("--pairs", pairs, "gold pairs (src_id,tgt_id CSV)")->check(CLI::ExistingFile);
    if (pairs_required) p->required();
  }

  Corpus load() const {
    if (pairs.empty()) {
      Corpus c{load_documents(docs), {}};
      c.validate();
      return c;
    }
    return load_corpus(docs, pairs);
  }
};

SplitPart parse_split(const std::string& s) {
  if (s == "train") return SplitPart::train;
  if (s == "dev") return SplitPart::dev;
  if (s == "test") return SplitPart::test;
  throw UsageError("unknown split '" + s + "'");
}

std::vector<DocumentPair> select_pairs(const std::vector<DocumentPair>& pairs, const std::string& split) {
  if (split == "all") return pairs;
  const SplitPart part = parse_split(split);
  std::vector<DocumentPair> out;
  for (const auto& p : pairs)
    if (split_of(p) == part) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Index description shared by build-index, mine and eval-pn

struct IndexFlags {
  std::string mode = "exact";
  AnnParams ann;

  void add(CLI::App* cmd) {
    cmd->add_option("--mode", mode, "exact or ann")->check(CLI::IsMember({"exact", "ann"}))->capture_default_str();
    cmd->add_option("--clusters", ann.num_clusters, "k-means clusters (ann)")->capture_default_str();
    cmd->add_option("--probes", ann.probes, "clusters probed per query (ann)")->capture_default_str();
    cmd->add_option("--kmeans-iters", ann.kmeans_iters, "Lloyd iterations (ann)")->capture_default_str();
  }

  IndexMode index_mode() const { return mode == "ann" ? IndexMode::ann : IndexMode::exact; }
};

json index_json(const std::string& emb_path, const IndexFlags& f) {
  return {{"embeddings", fs::absolute(emb_path).string()},
          {"embeddings_checksum", file_checksum(emb_path)},
          {"mode", f.mode},
          {"num_clusters", f.ann.num_clusters},
          {"probes", f.ann.probes},
          {"kmeans_iters", f.ann.kmeans_iters},
          {"seed", f.ann.seed}};
}

EmbeddingIndex load_index(const std::string& path) {
  const json j = read_json(path);
  const std::string emb = j.at("embeddings");
  if (file_checksum(emb) != j.at("embeddings_checksum").get<std::string>()) {
    throw ValidationError("index " + path + ": embeddings file " + emb + " changed since build-index");
  }
  EmbeddingMatrix m = load_embeddings(emb);
  const AnnParams ann{j.at("num_clusters"), j.at("probes"), j.at("kmeans_iters"), j.at("seed")};
  return EmbeddingIndex(std::move(m.ids), std::move(m.vectors), j.at("mode") == "ann" ? IndexMode::ann : IndexMode::exact, ann);
}

// ---------------------------------------------------------------------------
// Commands

int corpus_gen(const CLI::App& cmd, const Common& common, const SynthConfig& synth, const std::string& regime) {
  Run run(cmd, common, {});
  SynthConfig cfg = synth;
  cfg.seed = run.seed();
  try {
    cfg.regime = parse_regime(regime);
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  run.begin();
  const Corpus c = generate(cfg);
  save_corpus(c, run.out("docs.jsonl").string(), run.out("pairs.csv").string());
  run.output(run.out("docs.jsonl"));
  run.output(run.out("pairs.csv"));
  run.finish();
  std::cout << "wrote " << c.documents.size() << " documents, " << c.pairs.size() << " pairs to " << common.out << '\n';
  return 0;
}

int train_sentence(const CLI::App& cmd, const Common& common, const CorpusFlags& corpus, const SentenceFlags& flags) {
  Run run(cmd, common, {corpus.docs, corpus.pairs});
  const EncoderConfig enc = encoder_for(run);
  const SentenceTrainConfig tc = flags.resolve(run);
  try {
    enc.validate();
    tc.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  run.begin();
  const Corpus c = corpus.load();
  const SentenceModel model = train_sentence_model(c, enc, tc, run.seed() + 100, [&](std::size_t step, double loss) {
    if ((step + 1) % 100 == 0) std::cerr << "step " << step + 1 << " loss " << loss << '\n';
  });
  save_sentence_model(model, common.out);
  const SentenceEvalSet held = sentence_eval_set(c, {SplitPart::test});
  if (!held.queries.empty()) {
    const EvalReport rep = sentence_retrieval(model, held.queries, held.distractors, run.threads());
    write_text(run.out("sentence_eval.csv"), rep.to_csv());
    run.output(run.out("sentence_eval.csv"));
    std::cout << "held-out sentence retrieval\n" << rep.to_table();
  }
  for (const char* f : {"encoder.json", "vocab.txt", "sentence.ckpt"}) run.output(run.out(f));
  run.finish();
  return 0;
}

int embed_sentences(const CLI::App& cmd, const Common& common, const CorpusFlags& corpus, const std::string& model_dir) {
  Run run(cmd, common, {corpus.docs, model_dir});
  run.begin();
  const SentenceModel model = load_sentence_model(model_dir);
  const Corpus c = corpus.load();
  EmbeddingMatrix m;
  std::vector<FeatureSequence> feats;
  for (const auto& d : c.documents) {
    for (std::size_t i = 0; i < d.sentences.size(); ++i) {
      FeatureSequence fs = model.features(d.sentences[i]);
      if (fs.empty()) continue;
      m.ids.push_back(d.id + "#" + std::to_string(i));
      feats.push_back(std::move(fs));
    }
  }
  m.vectors = model.encoder.encode_all(feats, run.threads());
  save_embeddings(m, run.out("sentences.emb").string());
  run.output(run.out("sentences.emb"));
  run.finish();
  std::cout << "embedded " << m.ids.size() << " sentences (dim " << m.dim() << ")\n";
  return 0;
}

int train_doc(const CLI::App& cmd, const Common& common, const CorpusFlags& corpus, const std::string& model_dir,
              const std::string& kind_name, const DocFlags& flags) {
  Run run(cmd, common, {corpus.docs, corpus.pairs, model_dir});
  DocExperimentConfig dc = flags.resolve(run);
  try {
    dc.kinds = {parse_composer_kind(kind_name)};
    dc.train.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  run.begin();
  const SentenceModel model = load_sentence_model(model_dir);
  const Corpus c = corpus.load();
  std::vector<DocComposer> trained;
  const auto results = run_doc_experiment(c, model, dc, &trained);
  save_doc_model(trained.front(), common.out);
  write_log(results.front().log, run.out("train_log.csv"));
  write_text(run.out("eval.csv"), results.front().report.to_csv());
  for (const char* f : {"composer.json", "doc.ckpt", "train_log.csv", "eval.csv"}) run.output(run.out(f));
  run.finish();
  std::cout << to_string(dc.kinds.front()) << " held-out document retrieval\n" << results.front().report.to_table();
  return 0;
}

int embed_docs(const CLI::App& cmd, const Common& common, const CorpusFlags& corpus, const std::string& sent_dir,
               const std::string& doc_dir) {
  Run run(cmd, common, {corpus.docs, sent_dir, doc_dir});
  run.begin();
  const SentenceModel model = load_sentence_model(sent_dir);
  const DocComposer composer = load_doc_model(doc_dir);
  const Corpus c = corpus.load();
  const bool sent = uses_sentences(composer.kind());
  const DocumentInputs inputs = document_inputs(c, model, sent, !sent, run.threads());
  for (const char* lang : {"src", "tgt"}) {
    EmbeddingMatrix m;
    std::vector<DocumentInput> in;
    for (const auto& d : c.documents) {
      if (d.lang != lang) continue;
      m.ids.push_back(d.id);
      in.push_back(inputs.at(d.id));
    }
    m.vectors = composer.compose_all(in, run.threads());
    const fs::path p = run.out(std::string(lang) + ".emb");
    save_embeddings(m, p.string());
    run.output(p);
    std::cout << "embedded " << m.ids.size() << ' ' << lang << " documents -> " << p.string() << '\n';
  }
  run.finish();
  return 0;
}

int build_index_cmd(const CLI::App& cmd, const Common& common, const std::string& emb, const IndexFlags& flags) {
  Run run(cmd, common, {emb});
  if (flags.index_mode() == IndexMode::ann && (flags.ann.probes < 1 || flags.ann.probes > flags.ann.num_clusters)) {
    throw UsageError("--probes must lie in [1, --clusters]");
  }
  run.begin();
  EmbeddingMatrix m = load_embeddings(emb);
  const EmbeddingIndex index(std::move(m.ids), std::move(m.vectors), flags.index_mode(), flags.ann);
  write_text(run.out("index.json"), index_json(emb, flags).dump(2) + "\n");
  run.output(run.out("index.json"));
  run.finish();
  std::cout << "indexed " << index.size() << " vectors (dim " << index.dim() << ", " << flags.mode << ")\n";
  return 0;
}

int mine(const CLI::App& cmd, const Common& common, const std::string& index_path, const std::string& queries,
         std::size_t top, std::optional<std::size_t> probes) {
  Run run(cmd, common, {index_path, queries});
  if (top < 1) throw UsageError("--top must be >= 1");
  run.begin();
  const EmbeddingIndex index = load_index(index_path);
  const EmbeddingMatrix q = load_embeddings(queries);
  std::vector<RetrievalResult> results(q.ids.size());
  parallel_for(q.ids.size(), run.threads(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) results[i] = index.query(q.vectors.row(i), top, probes, q.ids[i]);
  });
  std::ostringstream os;
  os << "query_id,rank,candidate_id,score\n";
  for (const auto& r : results)
    for (std::size_t k = 0; k < r.ranked.size(); ++k) os << r.query_id << ',' << k + 1 << ',' << r.ranked[k].first << ',' << r.ranked[k].second << '\n';
  write_text(run.out("mined.csv"), os.str());
  run.output(run.out("mined.csv"));
  run.finish();
  std::cout << "mined top-" << top << " candidates for " << results.size() << " queries\n";
  return 0;
}

int eval_pn_cmd(const CLI::App& cmd, const Common& common, const std::string& queries, const std::string& candidates,
                const std::string& index_path, const std::string& gold_path, const std::string& split,
                const std::string& ns, const IndexFlags& flags) {
  Run run(cmd, common, {queries, candidates, index_path, gold_path});
  if (candidates.empty() == index_path.empty()) throw UsageError("give exactly one of --candidates and --index");
  const auto n_list = parse_list(ns);
  if (split != "all") parse_split(split);
  run.begin();
  const EmbeddingMatrix q = load_embeddings(queries);
  std::optional<EmbeddingIndex> index;
  if (!index_path.empty()) {
    index.emplace(load_index(index_path));
  } else {
    EmbeddingMatrix c = load_embeddings(candidates);
    index.emplace(std::move(c.ids), std::move(c.vectors), flags.index_mode(), flags.ann);
  }
  const auto gold = select_pairs(load_pairs(gold_path), split);
  const EvalReport rep = evaluate_pn(gold, *index, q.ids, q.vectors, n_list, run.threads());
  if (!common.out.empty()) {
    write_text(run.out("eval.csv"), rep.to_csv());
    run.output(run.out("eval.csv"));
    run.finish();
  }
  std::cout << rep.to_table();
  return 0;
}

int hist_diff(const CLI::App& cmd, const Common& common, const CorpusFlags& corpus, std::optional<double> merge,
              std::optional<double> split) {
  Run run(cmd, common, {corpus.docs, corpus.pairs});
  std::optional<SplitterConfig> resplit;
  if (merge || split) {
    resplit = SplitterConfig::noisy(merge.value_or(0.0), split.value_or(0.0), run.seed());
    try {
      resplit->validate();
    } catch (const ContractError& e) {
      throw UsageError(e.what());
    }
  }
  if (!common.out.empty()) run.begin();
  const LengthDiffHistogram h = length_diff_histogram(corpus.load(), resplit);
  if (!common.out.empty()) {
    write_text(run.out("hist.csv"), h.to_csv());
    run.output(run.out("hist.csv"));
    run.finish();
  }
  std::cout << h.to_table();
  return 0;
}

int sweep(const CLI::App& cmd, const Common& common, const CorpusFlags& doc_corpus, const CorpusFlags& sent_corpus,
          const std::string& steps_list, const SentenceFlags& sflags, const DocFlags& dflags, const std::string& kinds,
          const std::string& eval_split) {
  Run run(cmd, common, {doc_corpus.docs, doc_corpus.pairs, sent_corpus.docs, sent_corpus.pairs});
  const auto steps = parse_list(steps_list);
  if (steps.size() < 2) throw UsageError("--variants needs at least 2 encoder configurations");
  DocExperimentConfig dc = dflags.resolve(run);
  std::vector<EncoderVariant> variants;
  try {
    dc.kinds.clear();
    std::stringstream ss(kinds);
    for (std::string k; std::getline(ss, k, ',');) dc.kinds.push_back(parse_composer_kind(k));
    dc.eval_parts.clear();
    std::stringstream es(eval_split);
    for (std::string s; std::getline(es, s, ',');) dc.eval_parts.push_back(parse_split(s));
    dc.train.validate();
    for (std::size_t s : steps) {
      SentenceTrainConfig tc = sflags.resolve(run);
      tc.steps = s;
      tc.validate();
      variants.push_back({std::to_string(s) + "-steps", tc});
    }
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  run.begin();
  const Corpus docs = doc_corpus.load();
  const Corpus sents = sent_corpus.docs.empty() ? docs : sent_corpus.load();
  const auto rows = robustness_sweep(sents, docs, encoder_for(run), variants, dc, run.seed() + 100, [](const SweepRow& r) {
    std::cerr << r.name << " sentence P@1 " << r.sentence_p1 << '\n';
  });
  std::ostringstream os;
  os << "variant,sentence_p1";
  for (ComposerKind k : dc.kinds) os << ',' << to_string(k);
  os << '\n';
  for (const auto& r : rows) {
    os << r.name << ',' << r.sentence_p1;
    for (ComposerKind k : dc.kinds) os << ',' << r.doc_p1.at(k);
    os << '\n';
  }
  write_text(run.out("sweep.csv"), os.str());
  run.output(run.out("sweep.csv"));
  run.finish();
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bdm: bilingual document embedding and mining"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; flags win over file values");
  app.allow_config_extras(false);

  Common common;

  auto* gen = app.add_subcommand("corpus-gen", "generate a synthetic parallel corpus");
  add_common(gen, common);
  SynthConfig synth;
  std::string regime = "clean";
  gen->add_option("--regime", regime, "clean | noisy_segmentation | web_noisy")->capture_default_str();
  gen->add_option("--pairs", synth.num_pairs, "document pairs")->capture_default_str();
  gen->add_option("--vocab-size", synth.vocab_size, "lexicon size per language")->capture_default_str();
  gen->add_option("--min-sentences", synth.sentences_per_doc.min, "sentences per document, lower bound")->capture_default_str();
  gen->add_option("--max-sentences", synth.sentences_per_doc.max, "sentences per document, upper bound")->capture_default_str();
  gen->add_option("--merge-prob", synth.seg_noise.merge_prob, "segmentation noise: merge probability")->capture_default_str();
  gen->add_option("--split-prob", synth.seg_noise.split_prob, "segmentation noise: split probability")->capture_default_str();
  gen->add_option("--nontranslation-prob", synth.nontranslation_prob, "web_noisy: replaced target sentences")->capture_default_str();
  gen->add_option("--template-prob", synth.template_prob, "web_noisy: boilerplate per side")->capture_default_str();
  gen->add_option("--lexicon-seed", synth.lexicon_seed, "lexicon seed")->capture_default_str();

  auto* ts = app.add_subcommand("train-sentence", "train the sentence dual encoder");
  add_common(ts, common);
  CorpusFlags ts_corpus;
  ts_corpus.add(ts);
  SentenceFlags ts_flags;
  ts_flags.add(ts);

  auto* es = app.add_subcommand("embed-sentences", "embed every sentence of a corpus");
  add_common(es, common);
  CorpusFlags es_corpus;
  es_corpus.add(es, false);
  std::string es_model;
  es->add_option("--sentence-model", es_model, "train-sentence output directory")->required()->check(CLI::ExistingDirectory);

  auto* td = app.add_subcommand("train-doc", "train one document composer on frozen sentence embeddings");
  add_common(td, common);
  CorpusFlags td_corpus;
  td_corpus.add(td);
  std::string td_model, td_kind = "hide_dnn_pool";
  td->add_option("--sentence-model", td_model, "train-sentence output directory")->required()->check(CLI::ExistingDirectory);
  td->add_option("--composer", td_kind, "sentence_avg | bow_dan | hide_dnn_pool | hide_pool_dnn")->capture_default_str();
  DocFlags td_flags;
  td_flags.add(td);

  auto* ed = app.add_subcommand("embed-docs", "embed every document; writes src.emb and tgt.emb");
  add_common(ed, common);
  CorpusFlags ed_corpus;
  ed_corpus.add(ed, false);
  std::string ed_sent, ed_doc;
  ed->add_option("--sentence-model", ed_sent, "train-sentence output directory")->required()->check(CLI::ExistingDirectory);
  ed->add_option("--doc-model", ed_doc, "train-doc output directory")->required()->check(CLI::ExistingDirectory);

  auto* bi = app.add_subcommand("build-index", "validate embeddings and describe a search index");
  add_common(bi, common);
  std::string bi_emb;
  bi->add_option("--embeddings", bi_emb, "candidate embeddings (EMB1)")->required()->check(CLI::ExistingFile);
  IndexFlags bi_flags;
  bi_flags.add(bi);

  auto* mn = app.add_subcommand("mine", "retrieve top candidates for every query embedding");
  add_common(mn, common);
  std::string mn_index, mn_queries;
  std::size_t mn_top = 1;
  std::optional<std::size_t> mn_probes;
  mn->add_option("--index", mn_index, "build-index output (index.json)")->required()->check(CLI::ExistingFile);
  mn->add_option("--queries", mn_queries, "query embeddings (EMB1)")->required()->check(CLI::ExistingFile);
  mn->add_option("--top", mn_top, "candidates per query")->capture_default_str();
  mn->add_option("--probes", mn_probes, "override probes (ann)");

  auto* ev = app.add_subcommand("eval-pn", "P@N of gold pairs");
  add_common(ev, common, false);
  std::string ev_q, ev_c, ev_index, ev_gold, ev_split = "all", ev_ns = "1,3,10";
  ev->add_option("--queries", ev_q, "source embeddings (EMB1)")->required()->check(CLI::ExistingFile);
  ev->add_option("--candidates", ev_c, "target embeddings (EMB1)")->check(CLI::ExistingFile);
  ev->add_option("--index", ev_index, "build-index output instead of --candidates")->check(CLI::ExistingFile);
  ev->add_option("--gold", ev_gold, "gold pairs CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split, "all | train | dev | test")->check(CLI::IsMember({"all", "train", "dev", "test"}))->capture_default_str();
  ev->add_option("--n", ev_ns, "comma-separated N values")->capture_default_str();
  IndexFlags ev_flags;
  ev_flags.add(ev);

  auto* hd = app.add_subcommand("hist-diff", "histogram of sentence-count differences per pair");
  add_common(hd, common, false);
  CorpusFlags hd_corpus;
  hd_corpus.add(hd);
  std::optional<double> hd_merge, hd_split;
  hd->add_option("--resplit-merge", hd_merge, "re-split with this merge probability first");
  hd->add_option("--resplit-split", hd_split, "re-split with this split probability first");

  auto* rs = app.add_subcommand("robustness-sweep", "document retrieval under encoders of varying quality");
  add_common(rs, common);
  CorpusFlags rs_docs, rs_sents;
  rs_docs.add(rs);
  rs->add_option("--sentence-docs", rs_sents.docs, "corpus for encoder training (default: --docs)")->check(CLI::ExistingFile);
  rs->add_option("--sentence-pairs", rs_sents.pairs, "pairs for encoder training")->check(CLI::ExistingFile);
  std::string rs_variants = "25,50,100,600", rs_kinds = "sentence_avg,hide_dnn_pool", rs_eval = "dev,test";
  rs->add_option("--variants", rs_variants, "sentence training steps per encoder configuration")->capture_default_str();
  rs->add_option("--composers", rs_kinds, "comma-separated composer kinds")->capture_default_str();
  rs->add_option("--eval-splits", rs_eval, "comma-separated held-out splits")->capture_default_str();
  SentenceFlags rs_sflags;
  rs_sflags.add(rs);
  rs->remove_option(rs->get_option("--steps"));
  DocFlags rs_dflags;
  rs_dflags.add(rs, "doc-");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return corpus_gen(*gen, common, synth, regime);
    if (*ts) return train_sentence(*ts, common, ts_corpus, ts_flags);
    if (*es) return embed_sentences(*es, common, es_corpus, es_model);
    if (*td) return train_doc(*td, common, td_corpus, td_model, td_kind, td_flags);
    if (*ed) return embed_docs(*ed, common, ed_corpus, ed_sent, ed_doc);
    if (*bi) return build_index_cmd(*bi, common, bi_emb, bi_flags);
    if (*mn) return mine(*mn, common, mn_index, mn_queries, mn_top, mn_probes);
    if (*ev) return eval_pn_cmd(*ev, common, ev_q, ev_c, ev_index, ev_gold, ev_split, ev_ns, ev_flags);
    if (*hd) return hist_diff(*hd, common, hd_corpus, hd_merge, hd_split);
    if (*rs) return sweep(*rs, common, rs_docs, rs_sents, rs_variants, rs_sflags, rs_dflags, rs_kinds, rs_eval);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
