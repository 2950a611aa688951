#pragma once

// Synthetic parallel document corpora and their on-disk formats.
//
// "Translation" is a seeded bijection between a source and a target word list,
// so every generated pair has exact ground truth. Three regimes:
//   clean               target sentences are word-mapped copies, aligned 1:1
//   noisy_segmentation  target documents are re-split with a noisy splitter
//   web_noisy           as above, plus non-translated target sentences and
//                       boilerplate sentences shared across many documents

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "bdm/error.hpp"
#include "bdm/text.hpp"

namespace bdm {

struct DocumentRecord {
  std::string id;
  std::string lang;
  std::vector<std::string> sentences;

  friend bool operator==(const DocumentRecord&, const DocumentRecord&) = default;
};

struct DocumentPair {
  std::string src_id;
  std::string tgt_id;

  friend bool operator==(const DocumentPair&, const DocumentPair&) = default;
};

struct Corpus {
  std::vector<DocumentRecord> documents;
  std::vector<DocumentPair> pairs;

  friend bool operator==(const Corpus&, const Corpus&) = default;

  /// Unique ids, >=1 sentence per document, pair ids resolvable.
  void validate() const {
    std::unordered_set<std::string> ids;
    for (const auto& d : documents) {
      if (!ids.insert(d.id).second) throw ValidationError("duplicate document id '" + d.id + "'");
      if (d.sentences.empty()) throw ValidationError("document '" + d.id + "' has no sentences");
    }
    for (const auto& p : pairs) {
      if (!ids.count(p.src_id)) throw ValidationError("pair references missing document id '" + p.src_id + "'");
      if (!ids.count(p.tgt_id)) throw ValidationError("pair references missing document id '" + p.tgt_id + "'");
    }
  }

  std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < documents.size(); ++i) idx.emplace(documents[i].id, i);
    return idx;
  }
};

enum class Regime { clean, noisy_segmentation, web_noisy };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::clean: return "clean";
    case Regime::noisy_segmentation: return "noisy_segmentation";
    case Regime::web_noisy: return "web_noisy";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  for (Regime r : {Regime::clean, Regime::noisy_segmentation, Regime::web_noisy})
    if (to_string(r) == s) return r;
  throw ContractError("unknown regime '" + s + "'");
}

struct CountRange {
  std::size_t min = 1;
  std::size_t max = 1;
};

struct SynthConfig {
  std::size_t num_pairs = 1000;
  /// Word types per language.
  std::size_t vocab_size = 600;
  CountRange sentences_per_doc{3, 8};
  CountRange tokens_per_sentence{5, 12};
  std::uint64_t lexicon_seed = 17;
  /// Seed of document content and noise.
  std::uint64_t seed = 7;
  Regime regime = Regime::clean;
  SplitterConfig seg_noise = SplitterConfig::noisy(0.3, 0.2, 0);
  double nontranslation_prob = 0.0;
  double template_prob = 0.0;
  /// Probability that a word is followed by a comma.
  double comma_prob = 0.15;
  double zipf_exponent = 1.0;
  std::size_t num_templates = 6;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(nontranslation_prob) || !prob(template_prob) || !prob(comma_prob)) {
      throw ContractError("SynthConfig: probabilities must lie in [0,1]");
    }
    seg_noise.validate();
    if (sentences_per_doc.min < 1 || sentences_per_doc.min > sentences_per_doc.max ||
        tokens_per_sentence.min < 1 || tokens_per_sentence.min > tokens_per_sentence.max) {
      throw ContractError("SynthConfig: ranges must be non-empty and start at >= 1");
    }
    if (vocab_size < 1) throw ContractError("SynthConfig: vocab_size must be >= 1");
  }
};

/// Seeded bijection between source and target word lists (disjoint, distinct words).
class Lexicon {
 public:
  Lexicon(std::size_t size, std::uint64_t seed) {
    static constexpr std::string_view kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r",
                                                   "s", "t", "v", "z", "br", "st", "tr", "ch", "sh", "pl"};
    static constexpr std::string_view kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ie"};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> onset(0, std::size(kOnsets) - 1);
    std::uniform_int_distribution<std::size_t> vowel(0, std::size(kVowels) - 1);
    std::uniform_int_distribution<int> syllables(1, 4);
    std::unordered_set<std::string> seen;
    std::vector<std::string> words;
    while (words.size() < 2 * size) {
      std::string w;
      const int n = syllables(rng);
      for (int s = 0; s < n; ++s) {
        w += kOnsets[onset(rng)];
        w += kVowels[vowel(rng)];
      }
      if (w.size() < 2 || !seen.insert(w).second) continue;
      words.push_back(std::move(w));
    }
    src_.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(size));
    tgt_.assign(words.begin() + static_cast<std::ptrdiff_t>(size), words.end());
    for (std::size_t i = 0; i < size; ++i) {
      to_tgt_.emplace(src_[i], tgt_[i]);
      to_src_.emplace(tgt_[i], src_[i]);
    }
  }

  std::size_t size() const { return src_.size(); }
  const std::string& src_word(std::size_t i) const { return src_[i]; }
  const std::string& tgt_word(std::size_t i) const { return tgt_[i]; }

  /// Maps every source word of a sentence; punctuation and unknown words pass through.
  std::string translate(const std::string& sentence) const { return map_words(sentence, to_tgt_); }
  std::string inverse_translate(const std::string& sentence) const { return map_words(sentence, to_src_); }

 private:
  static std::string map_words(const std::string& s, const std::unordered_map<std::string, std::string>& m) {
    std::string out, word;
    auto flush = [&] {
      if (word.empty()) return;
      auto it = m.find(word);
      out += it == m.end() ? word : it->second;
      word.clear();
    };
    for (char c : s) {
      if (std::isalpha(static_cast<unsigned char>(c))) {
        word.push_back(c);
      } else {
        flush();
        out.push_back(c);
      }
    }
    flush();
    return out;
  }

  std::vector<std::string> src_, tgt_;
  std::unordered_map<std::string, std::string> to_tgt_, to_src_;
};

namespace detail {

inline std::string pad_id(const std::string& prefix, std::size_t i) {
  std::string n = std::to_string(i);
  return prefix + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

/// Zipf-distributed word indices by inverse CDF (portable across standard libraries).
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cdf_[r] = acc;
    }
    for (double& c : cdf_) c /= acc;
  }

  std::size_t operator()(double u) const {
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

inline std::size_t uniform_count(std::mt19937_64& rng, CountRange r) {
  return r.min + static_cast<std::size_t>(rng() % (r.max - r.min + 1));
}

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline std::string random_source_sentence(std::mt19937_64& rng, const Lexicon& lex, const ZipfSampler& zipf,
                                          const std::vector<std::size_t>& rank_to_word, const SynthConfig& cfg) {
  const std::size_t n = uniform_count(rng, cfg.tokens_per_sentence);
  std::string s;
  for (std::size_t t = 0; t < n; ++t) {
    if (t) s += ' ';
    s += lex.src_word(rank_to_word[zipf(unit(rng))]);
    if (t + 1 < n && unit(rng) < cfg.comma_prob) s += ',';
  }
  s += '.';
  return s;
}

inline std::string join_sentences(const std::vector<std::string>& sents) {
  std::string out;
  for (std::size_t i = 0; i < sents.size(); ++i) {
    if (i) out += ' ';
    out += sents[i];
  }
  return out;
}

}  // namespace detail

/// Documents are listed as all sources then all targets; pairs in generation order.
inline Corpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const Lexicon lex(cfg.vocab_size, cfg.lexicon_seed);
  std::mt19937_64 lex_rng(cfg.lexicon_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> rank_to_word(cfg.vocab_size);
  std::iota(rank_to_word.begin(), rank_to_word.end(), 0);
  std::shuffle(rank_to_word.begin(), rank_to_word.end(), lex_rng);
  const detail::ZipfSampler zipf(cfg.vocab_size, cfg.zipf_exponent);

  std::vector<std::string> templates;
  for (std::size_t t = 0; t < cfg.num_templates; ++t) {
    templates.push_back(detail::random_source_sentence(lex_rng, lex, zipf, rank_to_word, cfg));
  }

  std::mt19937_64 content(cfg.seed);
  std::mt19937_64 noise(cfg.seed ^ 0xd1b54a32d192ed03ULL);
  Corpus corpus;
  std::vector<DocumentRecord> tgts;
  for (std::size_t i = 0; i < cfg.num_pairs; ++i) {
    DocumentRecord src{detail::pad_id("src-", i), "src", {}};
    DocumentRecord tgt{detail::pad_id("tgt-", i), "tgt", {}};
    const std::size_t n = detail::uniform_count(content, cfg.sentences_per_doc);
    for (std::size_t s = 0; s < n; ++s) {
      src.sentences.push_back(detail::random_source_sentence(content, lex, zipf, rank_to_word, cfg));
      tgt.sentences.push_back(lex.translate(src.sentences.back()));
    }

    if (cfg.regime == Regime::web_noisy) {
      for (auto& sent : tgt.sentences) {
        if (detail::unit(noise) < cfg.nontranslation_prob) {
          sent = lex.translate(detail::random_source_sentence(noise, lex, zipf, rank_to_word, cfg));
        }
      }
      // Boilerplate is inserted per side independently, like site templates
      // that differ between language versions of a page.
      auto inject = [&](DocumentRecord& doc, bool target_side) {
        if (templates.empty() || !(detail::unit(noise) < cfg.template_prob)) return;
        const std::string& tpl = templates[noise() % templates.size()];
        const std::size_t pos = noise() % (doc.sentences.size() + 1);
        doc.sentences.insert(doc.sentences.begin() + static_cast<std::ptrdiff_t>(pos),
                             target_side ? lex.translate(tpl) : tpl);
      };
      inject(src, false);
      inject(tgt, true);
    }

    if (cfg.regime != Regime::clean) {
      SplitterConfig sc = cfg.seg_noise;
      sc.seed = cfg.seg_noise.seed ^ (cfg.seed * 0x100000001b3ULL + i);
      tgt.sentences = split_sentences(detail::join_sentences(tgt.sentences), sc);
    }

    corpus.pairs.push_back({src.id, tgt.id});
    corpus.documents.push_back(std::move(src));
    tgts.push_back(std::move(tgt));
  }
  for (auto& t : tgts) corpus.documents.push_back(std::move(t));
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits

enum class SplitPart { train, dev, test };

/// 80/10/10 by FNV-1a of the source document id.
inline SplitPart split_of(const DocumentPair& p) {
  const auto b = fnv1a64(p.src_id) % 10;
  return b < 8 ? SplitPart::train : (b == 8 ? SplitPart::dev : SplitPart::test);
}

inline std::vector<DocumentPair> pairs_in(const Corpus& c, SplitPart part) {
  std::vector<DocumentPair> out;
  for (const auto& p : c.pairs)
    if (split_of(p) == part) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Files: JSON Lines documents + "src_id,tgt_id" CSV pairs

inline void save_corpus(const Corpus& c, const std::string& docs_path, const std::string& pairs_path) {
  std::ofstream docs(docs_path, std::ios::binary);
  if (!docs) throw Error("cannot open for writing: " + docs_path);
  for (const auto& d : c.documents) {
    nlohmann::json j{{"id", d.id}, {"lang", d.lang}, {"sentences", d.sentences}};
    docs << j.dump() << '\n';
  }
  std::ofstream pairs(pairs_path, std::ios::binary);
  if (!pairs) throw Error("cannot open for writing: " + pairs_path);
  for (const auto& p : c.pairs) pairs << p.src_id << ',' << p.tgt_id << '\n';
}

inline std::vector<DocumentRecord> load_documents(const std::string& docs_path) {
  std::ifstream is(docs_path, std::ios::binary);
  if (!is) throw Error("cannot open corpus: " + docs_path);
  std::vector<DocumentRecord> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DocumentRecord d{j.at("id").get<std::string>(), j.at("lang").get<std::string>(),
                       j.at("sentences").get<std::vector<std::string>>()};
      docs.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed document record: ") + e.what(), lineno);
    }
  }
  return docs;
}

inline std::vector<DocumentPair> load_pairs(const std::string& pairs_path) {
  std::ifstream is(pairs_path, std::ios::binary);
  if (!is) throw Error("cannot open pairs file: " + pairs_path);
  std::vector<DocumentPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 == line.size() ||
        line.find(',', comma + 1) != std::string::npos) {
      throw ParseError("expected 'src_id,tgt_id'", lineno);
    }
    pairs.push_back({line.substr(0, comma), line.substr(comma + 1)});
  }
  return pairs;
}

inline Corpus load_corpus(const std::string& docs_path, const std::string& pairs_path) {
  Corpus c{load_documents(docs_path), load_pairs(pairs_path)};
  c.validate();
  return c;
}

}  // namespace bdm
