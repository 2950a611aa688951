#include <gtest/gtest.h>

#include <random>
#include <string>
#include <vector>

#include "bdm/text.hpp"
#include "test_util.hpp"

using namespace bdm;

namespace {

using Tokens = std::vector<std::string>;

// Independent FNV-1a 64 for the re-hash oracle.
std::uint64_t fnv_oracle(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string random_text(std::mt19937_64& rng) {
  static const char* kPieces[] = {"alpha", "Beta", "x", "12", "mots", ".", ",", ";", "!", "?", " ", " ", " ", "\n", "  "};
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPieces) - 1), len(0, 40);
  std::string s;
  const std::size_t n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s += kPieces[pick(rng)];
  return s;
}

std::string non_space(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  return out;
}

}  // namespace

TEST(Tokenize, Empty) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, PunctuationIsItsOwnToken) {
  EXPECT_EQ(tokenize("Original: English"), (Tokens{"original", ":", "english"}));
}

TEST(Tokenize, DateSplitsOnWhitespace) { EXPECT_EQ(tokenize("1 July 2011"), (Tokens{"1", "july", "2011"})); }

TEST(Tokenize, RunsOfPunctuationAndSpaces) {
  EXPECT_EQ(tokenize("  Hi,,there!\n"), (Tokens{"hi", ",", ",", "there", "!"}));
}

TEST(Featurize, ThreeLetterTokenHasOneNgram) {
  const VocabConfig cfg;
  const auto fs = featurize({"cat"}, Vocabulary{}, cfg);
  ASSERT_EQ(fs.char_ids.size(), 1u);
  EXPECT_EQ(fs.char_ids[0], (std::vector<std::size_t>{fnv_oracle("cat") % cfg.char_buckets}));
}

TEST(Featurize, ShortTokenHasNoNgramsButAWordId) {
  const auto fs = featurize({"ab"}, Vocabulary{}, VocabConfig{});
  ASSERT_EQ(fs.word_ids.size(), 1u);
  EXPECT_TRUE(fs.char_ids[0].empty());
}

TEST(Featurize, NgramsMatchRehashOracle) {
  const VocabConfig cfg;
  const auto fs = featurize({"word"}, Vocabulary{}, cfg);
  std::vector<std::size_t> expected;
  for (const char* g : {"wor", "ord", "word"}) expected.push_back(fnv_oracle(g) % cfg.char_buckets);
  EXPECT_EQ(fs.char_ids[0], expected);
}

TEST(Featurize, InVocabularyAndOovIds) {
  const VocabConfig cfg{3, 10, 3, 6, 50};
  const Vocabulary vocab({"the", "cat", "sat", "mat"});
  const auto fs = featurize({"cat", "mat", "dog"}, vocab, cfg);
  EXPECT_EQ(fs.word_ids[0], 1u);
  // "mat" is in the learned list but past vocab_size, so it hashes to a bucket.
  EXPECT_EQ(fs.word_ids[1], 3 + fnv_oracle("mat") % 10);
  EXPECT_EQ(fs.word_ids[2], 3 + fnv_oracle("dog") % 10);
}

TEST(Featurize, InvalidConfigRejected) {
  EXPECT_THROW(featurize({"a"}, Vocabulary{}, VocabConfig{10, 0, 3, 6, 10}), ContractError);
  EXPECT_THROW(featurize({"a"}, Vocabulary{}, VocabConfig{10, 5, 4, 3, 10}), ContractError);
}

TEST(FeaturizeProperty, IdsInRangeAndDeterministic) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> small(1, 50);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t lo = small(rng) % 4 + 1;
    const VocabConfig cfg{small(rng), small(rng), lo, lo + small(rng) % 4, small(rng)};
    const Tokens toks = tokenize(random_text(rng));
    const Vocabulary vocab = Vocabulary::build({toks}, small(rng));
    const auto fs = featurize(toks, vocab, cfg);
    ASSERT_EQ(fs.word_ids.size(), fs.char_ids.size());
    for (std::size_t w : fs.word_ids) ASSERT_LT(w, cfg.vocab_size + cfg.oov_buckets);
    for (const auto& ids : fs.char_ids)
      for (std::size_t id : ids) ASSERT_LT(id, cfg.char_buckets);
    ASSERT_EQ(fs, featurize(toks, vocab, cfg));
  }
}

TEST(Vocabulary, MostFrequentFirstTiesLexicographic) {
  const Vocabulary v = Vocabulary::build({{"b", "a", "c", "c"}, {"b", "d"}}, 3);
  EXPECT_EQ(v.tokens(), (Tokens{"b", "c", "a"}));
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  bdm::testing::TempDir dir;
  const Vocabulary v({"x", "why", ":"});
  v.save(dir / "vocab.txt");
  EXPECT_EQ(bdm::testing::read_file(dir / "vocab.txt"), "x\nwhy\n:\n");
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), v);
}

TEST(Vocabulary, BadFilesRejected) {
  bdm::testing::TempDir dir;
  bdm::testing::write_file(dir / "v.txt", "a\n\nb\n");
  try {
    Vocabulary::load(dir / "v.txt");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  bdm::testing::write_file(dir / "d.txt", "a\na\n");
  EXPECT_THROW(Vocabulary::load(dir / "d.txt"), ContractError);
  EXPECT_THROW(Vocabulary::load(dir / "missing.txt"), Error);
}

TEST(SplitSentences, CleanSplitsAtFinalPunctuation) {
  EXPECT_EQ(split_sentences("A. B.", SplitterConfig::clean()), (Tokens{"A.", "B."}));
  EXPECT_EQ(split_sentences("One! Two? Three\nFour", SplitterConfig::clean()), (Tokens{"One!", "Two?", "Three", "Four"}));
  EXPECT_EQ(split_sentences("3.5 is a number.", SplitterConfig::clean()), (Tokens{"3.5 is a number."}));
  EXPECT_TRUE(split_sentences("  \n ", SplitterConfig::clean()).empty());
}

TEST(SplitSentences, CleanModeIgnoresProbabilities) {
  const SplitterConfig cfg{SplitMode::clean, 1.0, 1.0, 3};
  EXPECT_EQ(split_sentences("a, b. c; d.", cfg), (Tokens{"a, b.", "c; d."}));
}

TEST(SplitSentences, MergeAllGivesOneSentence) {
  const std::string doc = "First part here. Second part here. Third part here.";
  ASSERT_EQ(split_sentences(doc, SplitterConfig::clean()).size(), 3u);
  EXPECT_EQ(split_sentences(doc, SplitterConfig::noisy(1.0, 0.0, 42)), (Tokens{doc}));
}

TEST(SplitSentences, SplitAllCutsAtEveryComma) {
  EXPECT_EQ(split_sentences("a, b; c.", SplitterConfig::noisy(0.0, 1.0, 1)), (Tokens{"a,", "b;", "c."}));
}

TEST(SplitSentences, InvalidProbabilityRejected) {
  EXPECT_THROW(split_sentences("a", SplitterConfig::noisy(1.5, 0.0, 1)), ContractError);
  EXPECT_THROW(split_sentences("a", SplitterConfig::noisy(0.0, -0.1, 1)), ContractError);
}

TEST(SplitProperty, ZeroNoiseEqualsClean) {
  std::mt19937_64 rng(2);
  for (int c = 0; c < 1000; ++c) {
    const std::string text = random_text(rng);
    ASSERT_EQ(split_sentences(text, SplitterConfig::noisy(0.0, 0.0, rng())), split_sentences(text, SplitterConfig::clean()))
        << text;
  }
}

TEST(SplitProperty, ConcatenationPreservesNonWhitespace) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  for (int c = 0; c < 1000; ++c) {
    const std::string text = random_text(rng);
    for (const SplitterConfig& cfg : {SplitterConfig::clean(), SplitterConfig::noisy(p(rng), p(rng), rng())}) {
      std::string joined;
      for (const auto& s : split_sentences(text, cfg)) joined += s;
      ASSERT_EQ(non_space(joined), non_space(text)) << text;
    }
  }
}

TEST(SplitProperty, NoisyIsDeterministic) {
  std::mt19937_64 rng(4);
  for (int c = 0; c < 200; ++c) {
    const std::string text = random_text(rng);
    const auto cfg = SplitterConfig::noisy(0.4, 0.3, rng());
    ASSERT_EQ(split_sentences(text, cfg), split_sentences(text, cfg));
  }
}
