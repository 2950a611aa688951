#pragma once

// Tokenization, hashed vocabulary, character n-gram features and sentence splitting.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bdm/error.hpp"

namespace bdm {

/// 64-bit FNV-1a over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (char ch : bytes) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tokenizer

namespace detail {

inline bool is_ascii_space(unsigned char c) { return c < 0x80 && std::isspace(c); }
inline bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace detail

/// Lowercases ASCII, splits on whitespace, and emits each ASCII punctuation
/// character as its own token. Non-ASCII bytes are treated as word characters.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (detail::is_ascii_space(c)) {
      flush();
    } else if (detail::is_ascii_punct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// Vocabulary and features

struct VocabConfig {
  std::size_t vocab_size = 2000;
  std::size_t oov_buckets = 100;
  std::size_t char_ngram_min = 3;
  std::size_t char_ngram_max = 6;
  std::size_t char_buckets = 2000;

  void validate() const {
    if (vocab_size < 1 || oov_buckets < 1 || char_buckets < 1 || char_ngram_min < 1 || char_ngram_max < 1) {
      throw ContractError("VocabConfig: all counts must be >= 1");
    }
    if (char_ngram_min > char_ngram_max) throw ContractError("VocabConfig: char_ngram_min > char_ngram_max");
  }

  std::size_t word_table_rows() const { return vocab_size + oov_buckets; }

  static VocabConfig desk() { return {}; }
  static VocabConfig paper() { return {200000, 10000, 3, 6, 200000}; }
};

/// Per-token word id plus the char n-gram bucket ids of that token.
struct FeatureSequence {
  std::vector<std::size_t> word_ids;
  std::vector<std::vector<std::size_t>> char_ids;

  std::size_t size() const { return word_ids.size(); }
  bool empty() const { return word_ids.empty(); }

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

/// Learned in-vocabulary tokens; ids are positions in the list.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw ContractError("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }

  /// Keeps the `max_size` most frequent tokens; ties broken lexicographically.
  static Vocabulary build(const std::vector<std::vector<std::string>>& tokenized, std::size_t max_size) {
    std::unordered_map<std::string, std::size_t> counts;
    for (const auto& sent : tokenized)
      for (const auto& tok : sent) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (items.size() > max_size) items.resize(max_size);
    std::vector<std::string> tokens;
    tokens.reserve(items.size());
    for (auto& [tok, n] : items) tokens.push_back(tok);
    return Vocabulary(std::move(tokens));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::optional<std::size_t> find(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    return std::nullopt;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open vocabulary for writing: " + path);
    for (const auto& t : tokens_) os << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open vocabulary: " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) throw ParseError("empty vocabulary entry", lineno);
      tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Char n-gram bucket ids of one token, n ascending then start position ascending.
inline std::vector<std::size_t> char_ngram_ids(std::string_view token, const VocabConfig& cfg) {
  std::vector<std::size_t> ids;
  for (std::size_t n = cfg.char_ngram_min; n <= cfg.char_ngram_max; ++n) {
    if (token.size() < n) break;
    for (std::size_t s = 0; s + n <= token.size(); ++s) {
      ids.push_back(static_cast<std::size_t>(fnv1a64(token.substr(s, n)) % cfg.char_buckets));
    }
  }
  return ids;
}

inline std::size_t word_id(const std::string& token, const Vocabulary& vocab, const VocabConfig& cfg) {
  if (auto id = vocab.find(token); id && *id < cfg.vocab_size) return *id;
  return cfg.vocab_size + static_cast<std::size_t>(fnv1a64(token) % cfg.oov_buckets);
}

inline FeatureSequence featurize(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                                 const VocabConfig& cfg) {
  cfg.validate();
  FeatureSequence fs;
  fs.word_ids.reserve(tokens.size());
  fs.char_ids.reserve(tokens.size());
  for (const auto& tok : tokens) {
    fs.word_ids.push_back(word_id(tok, vocab, cfg));
    fs.char_ids.push_back(char_ngram_ids(tok, cfg));
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Sentence splitting

enum class SplitMode { clean, noisy };

struct SplitterConfig {
  SplitMode mode = SplitMode::clean;
  double merge_prob = 0.0;
  double split_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (merge_prob < 0.0 || merge_prob > 1.0 || split_prob < 0.0 || split_prob > 1.0) {
      throw ContractError("SplitterConfig: probabilities must lie in [0,1]");
    }
  }

  static SplitterConfig clean() { return {}; }
  static SplitterConfig noisy(double merge, double split, std::uint64_t seed) {
    return {SplitMode::noisy, merge, split, seed};
  }
};

namespace detail {

inline bool is_sentence_final(char c) { return c == '.' || c == '!' || c == '?'; }

inline std::string trimmed(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_ascii_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_ascii_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Clean mode cuts after . ! ? followed by whitespace and at newlines.
/// Noisy mode visits every clean cut and every , or ; in text order, drawing one
/// uniform per position: clean cuts survive with 1 - merge_prob, and a cut is
/// added after a comma/semicolon with split_prob.
inline std::vector<std::string> split_sentences(std::string_view text, SplitterConfig cfg) {
  cfg.validate();
  if (cfg.mode == SplitMode::clean) cfg.merge_prob = cfg.split_prob = 0.0;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const bool noisy = cfg.mode == SplitMode::noisy;

  std::vector<std::size_t> cuts;  // cut after text[cut - 1]
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    const bool clean_cut =
        c == '\n' || (detail::is_sentence_final(c) && i + 1 < text.size() &&
                      detail::is_ascii_space(static_cast<unsigned char>(text[i + 1])));
    if (clean_cut) {
      const bool keep = !noisy || !(uni(rng) < cfg.merge_prob);
      if (keep) cuts.push_back(i + 1);
    } else if (noisy && (c == ',' || c == ';')) {
      if (uni(rng) < cfg.split_prob) cuts.push_back(i + 1);
    }
  }
  cuts.push_back(text.size());

  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t cut : cuts) {
    std::string piece = detail::trimmed(text.substr(start, cut - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    start = cut;
  }
  return out;
}

}  // namespace bdm
