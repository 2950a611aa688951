#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "bdm/sentence_encoder.hpp"
#include "test_util.hpp"

using namespace bdm;

namespace {

EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 8;
  cfg.filter_dim = 16;
  cfg.num_heads = 2;
  cfg.num_blocks = 2;
  cfg.vocab = {40, 5, 3, 6, 60};
  return cfg;
}

FeatureSequence random_sequence(std::mt19937_64& rng, std::size_t len, const VocabConfig& v) {
  std::uniform_int_distribution<std::size_t> wid(0, v.word_table_rows() - 1), cid(0, v.char_buckets - 1), nc(0, 4);
  FeatureSequence fs;
  for (std::size_t t = 0; t < len; ++t) {
    fs.word_ids.push_back(wid(rng));
    std::vector<std::size_t> chars(nc(rng));
    for (auto& c : chars) c = cid(rng);
    fs.char_ids.push_back(std::move(chars));
  }
  return fs;
}

double row_norm(const Tensor2& t, std::size_t r) { return l2_norm(t.row(r)); }

}  // namespace

TEST(EmbedTokens, NoCharNgramsGivesWordRow) {
  const SentenceEncoder enc(small_config(), 1);
  const Tensor2 rows = enc.embed_tokens(FeatureSequence{{7}, {{}}});
  const Parameter* words = enc.params().find("sent.word_table");
  for (std::size_t c = 0; c < rows.cols(); ++c) EXPECT_EQ(rows(0, c), words->value(7, c));
}

TEST(EmbedTokens, IdenticalFeaturesGiveIdenticalRows) {
  const SentenceEncoder enc(small_config(), 1);
  const Tensor2 rows = enc.embed_tokens(FeatureSequence{{3, 3}, {{1, 9}, {1, 9}}});
  for (std::size_t c = 0; c < rows.cols(); ++c) EXPECT_EQ(rows(0, c), rows(1, c));
}

TEST(EmbedTokens, MatchesGatherAndSumOracle) {
  const SentenceEncoder enc(small_config(), 2);
  std::mt19937_64 rng(3);
  const FeatureSequence fs = random_sequence(rng, 6, enc.config().vocab);
  const Tensor2 rows = enc.embed_tokens(fs);
  const Tensor2& w = enc.params().find("sent.word_table")->value;
  const Tensor2& ch = enc.params().find("sent.char_table")->value;
  for (std::size_t t = 0; t < fs.size(); ++t) {
    for (std::size_t c = 0; c < rows.cols(); ++c) {
      double chars = 0.0;
      for (std::size_t id : fs.char_ids[t]) chars += ch(id, c);
      EXPECT_NEAR(rows(t, c), w(fs.word_ids[t], c) + chars, 1e-12);
    }
  }
}

TEST(EmbedTokens, OutOfRangeIdThrows) {
  const SentenceEncoder enc(small_config(), 1);
  EXPECT_THROW(enc.embed_tokens(FeatureSequence{{45}, {{}}}), ContractError);
  EXPECT_THROW(enc.embed_tokens(FeatureSequence{{1}, {{60}}}), ContractError);
}

TEST(Pooling, SingleTokenMinMaxAttentionAgree) {
  const SentenceEncoder enc(small_config(), 4);
  Tape t(false);
  const Tensor2 pooled = enc.pooled(t, FeatureSequence{{5}, {{2, 3}}}, 0).value();
  const std::size_t h = enc.config().hidden_dim;
  for (std::size_t c = 0; c < h; ++c) {
    EXPECT_EQ(pooled(0, c), pooled(0, h + c));
    EXPECT_NEAR(pooled(0, c), pooled(0, 2 * h + c), 1e-12);
  }
}

TEST(Pooling, UniformAttentionExample) {
  Tape t;
  const Tensor2 r = pool_min_max_attention(t.constant(Tensor2::from_rows({{1, 3}, {3, 1}})), t.constant(Tensor2(1, 2)), 2).value();
  EXPECT_EQ(r, Tensor2::from_rows({{1, 1, 3, 3, 2, 2}}));
}

TEST(Encode, UnitNormAndEmptyRejected) {
  const SentenceEncoder enc(small_config(), 5);
  std::mt19937_64 rng(6);
  const Tensor2 e = enc.encode(random_sequence(rng, 4, enc.config().vocab));
  EXPECT_EQ(e.cols(), 3 * enc.config().hidden_dim);
  EXPECT_NEAR(row_norm(e, 0), 1.0, 1e-6);
  EXPECT_THROW(enc.encode(FeatureSequence{}), ContractError);
  const std::vector<FeatureSequence> with_empty{random_sequence(rng, 2, enc.config().vocab), FeatureSequence{}};
  EXPECT_THROW(enc.encode_batch(with_empty), ContractError);
}

TEST(Encode, ConfigValidation) {
  EncoderConfig cfg = small_config();
  cfg.num_heads = 3;
  EXPECT_THROW(SentenceEncoder(cfg, 1), ContractError);
  cfg = small_config();
  cfg.num_blocks = 0;
  EXPECT_THROW(SentenceEncoder(cfg, 1), ContractError);
}

TEST(EncodeBatch, BatchOfOneEqualsEncode) {
  const SentenceEncoder enc(small_config(), 7);
  std::mt19937_64 rng(8);
  const std::vector<FeatureSequence> one{random_sequence(rng, 5, enc.config().vocab)};
  const Tensor2 b = enc.encode_batch(one), e = enc.encode(one[0]);
  for (std::size_t c = 0; c < e.cols(); ++c) EXPECT_NEAR(b(0, c), e(0, c), 1e-6);
}

TEST(EncodeBatch, MixedLengthsMatchUnbatched) {
  const SentenceEncoder enc(small_config(), 9);
  std::mt19937_64 rng(10);
  std::vector<FeatureSequence> batch;
  for (std::size_t len : {1, 7, 3, 12, 2}) batch.push_back(random_sequence(rng, len, enc.config().vocab));
  const Tensor2 b = enc.encode_batch(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor2 e = enc.encode(batch[i]);
    for (std::size_t c = 0; c < e.cols(); ++c) EXPECT_NEAR(b(i, c), e(0, c), 1e-6) << "row " << i;
  }
}

TEST(EncodeBatch, PermutingBatchPermutesRows) {
  const SentenceEncoder enc(small_config(), 11);
  std::mt19937_64 rng(12);
  std::vector<FeatureSequence> batch;
  for (std::size_t len : {2, 5, 3, 8}) batch.push_back(random_sequence(rng, len, enc.config().vocab));
  const Tensor2 a = enc.encode_batch(batch);
  std::vector<FeatureSequence> rev(batch.rbegin(), batch.rend());
  const Tensor2 b = enc.encode_batch(rev);
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t c = 0; c < a.cols(); ++c) EXPECT_EQ(a(i, c), b(batch.size() - 1 - i, c));
}

TEST(EncodeBatch, ThreadsGiveIdenticalRows) {
  const SentenceEncoder enc(small_config(), 13);
  std::mt19937_64 rng(14);
  std::vector<FeatureSequence> batch;
  for (int i = 0; i < 9; ++i) batch.push_back(random_sequence(rng, 1 + i % 5, enc.config().vocab));
  EXPECT_EQ(enc.encode_batch(batch, 1), enc.encode_batch(batch, 4));
  EXPECT_EQ(enc.encode_all(batch, 1), enc.encode_all(batch, 3));
}

TEST(EncoderProperty, PaddingNeverChangesARow) {
  const SentenceEncoder enc(EncoderConfig::desk(), 15);
  std::mt19937_64 rng(16);
  std::uniform_int_distribution<std::size_t> len(1, 10), pad(0, 8);
  double worst = 0.0;
  for (int c = 0; c < 1000; ++c) {
    const FeatureSequence fs = random_sequence(rng, len(rng), enc.config().vocab);
    Tape t(false);
    const Tensor2 padded = enc.forward(t, fs, fs.size() + pad(rng)).value();
    const Tensor2 plain = enc.encode(fs);
    for (std::size_t k = 0; k < plain.size(); ++k) worst = std::max(worst, std::abs(padded.values()[k] - plain.values()[k]));
    ASSERT_NEAR(row_norm(padded, 0), 1.0, 1e-6);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(EncoderProperty, SameSeedSameEmbeddingsBitwise) {
  const SentenceEncoder a(small_config(), 17), b(small_config(), 17), c(small_config(), 18);
  std::mt19937_64 rng(19);
  const FeatureSequence fs = random_sequence(rng, 6, a.config().vocab);
  EXPECT_EQ(a.encode(fs), b.encode(fs));
  EXPECT_NE(a.encode(fs), c.encode(fs));
}

TEST(TrainSentence, ZeroStepsLeavesParameters) {
  SentenceEncoder enc(small_config(), 20);
  const auto before = checksum(enc.params());
  SentenceTrainConfig cfg;
  cfg.steps = 0;
  EXPECT_TRUE(train_sentence_encoder(enc, {}, cfg).losses.empty());
  EXPECT_EQ(checksum(enc.params()), before);
}

TEST(TrainSentence, LossDecreasesOnToyPairs) {
  SentenceEncoder enc(small_config(), 21);
  std::mt19937_64 rng(22);
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 16; ++i) {
    FeatureSequence s = random_sequence(rng, 4, enc.config().vocab);
    FeatureSequence t = s;
    for (auto& w : t.word_ids) w = (w + 11) % enc.config().vocab.word_table_rows();
    pairs.emplace_back(std::move(s), std::move(t));
  }
  SentenceTrainConfig cfg;
  cfg.steps = 150;
  cfg.batch_size = 8;
  cfg.learning_rate = 0.02;
  const auto log = train_sentence_encoder(enc, pairs, cfg);
  ASSERT_EQ(log.losses.size(), 150u);
  auto mean = [&](std::size_t b) { return (log.losses[b] + log.losses[b + 1] + log.losses[b + 2]) / 3; };
  EXPECT_LT(mean(147), 0.5 * mean(0));
}

TEST(TrainSentence, HardNegativePathRunsAndStaysFinite) {
  SentenceEncoder enc(small_config(), 23);
  std::mt19937_64 rng(24);
  std::vector<SentencePair> pairs;
  for (int i = 0; i < 12; ++i) pairs.emplace_back(random_sequence(rng, 3, enc.config().vocab), random_sequence(rng, 3, enc.config().vocab));
  SentenceTrainConfig cfg;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.hard_negatives = 2;
  cfg.hard_negative_refresh = 4;
  const auto log = train_sentence_encoder(enc, pairs, cfg);
  for (double l : log.losses) EXPECT_TRUE(std::isfinite(l));
  cfg.hard_negatives = 6;
  EXPECT_THROW(train_sentence_encoder(enc, pairs, cfg), ContractError);
}

TEST(TrainSentence, Presets) {
  const auto paper = SentenceTrainConfig::paper();
  EXPECT_EQ(paper.batch_size, 100u);
  EXPECT_DOUBLE_EQ(paper.learning_rate, 0.003);
  EXPECT_DOUBLE_EQ(paper.margin, 0.3);
  const auto enc = EncoderConfig::paper();
  EXPECT_EQ(enc.hidden_dim, 512u);
  EXPECT_EQ(enc.filter_dim, 2048u);
  EXPECT_EQ(enc.num_heads, 8u);
  EXPECT_EQ(enc.num_blocks, 3u);
  EXPECT_EQ(enc.embed_dim, 320u);
  EXPECT_EQ(enc.vocab.word_table_rows(), 210000u);
}
