#include <filesystem>

#include <gtest/gtest.h>

#include "codemix/tokenizer.hpp"

using namespace codemix;

namespace {

Vocabulary small_vocab() {
  const std::vector<std::string> words{"low", "low", "lowest", "newer", "newer", "wider"};
  return train_vocabulary_from_words(words, 40);
}

}  // namespace

TEST(Vocabulary, SpecialsComeFirst) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.token(kMaskId), "[MASK]");
  EXPECT_THROW(Vocabulary({"a", "b"}), std::invalid_argument);
  auto dup = special_tokens();
  dup.push_back("x");
  dup.push_back("x");
  EXPECT_THROW(Vocabulary{dup}, std::invalid_argument);
}

TEST(Train, LowLowLowestMergesLowFirst) {
  const std::vector<std::string> words{"low", "low", "lowest"};
  const auto v = train_vocabulary_from_words(words, 100);
  // hand-run: l+##o (3, "lo" < "ow"), then lo+##w (3); nothing else occurs twice
  const auto& t = v.tokens();
  ASSERT_EQ(t.size(), 5u + 6u + 2u);
  EXPECT_EQ(t[11], "lo");
  EXPECT_EQ(t[12], "low");
  EXPECT_EQ(tokenize_word("low", v), std::vector<TokenId>{12});
}

TEST(Train, TargetTooSmallAndEmpty) {
  const std::vector<std::string> words{"abc"};
  EXPECT_THROW(train_vocabulary_from_words(words, 7), std::invalid_argument);
  EXPECT_NO_THROW(train_vocabulary_from_words(words, 8));
  EXPECT_THROW(train_vocabulary_from_words(std::vector<std::string>{}, 50), std::invalid_argument);
}

TEST(Train, DeterministicAndSeedIndependent) {
  const std::vector<std::string> words{"newer", "wider", "newest", "widest", "new"};
  EXPECT_EQ(train_vocabulary_from_words(words, 30, 1), train_vocabulary_from_words(words, 30, 99));
}

TEST(Tokenize, UnknownCharactersBecomeUnk) {
  const auto v = small_vocab();
  const auto ids = tokenize_word("lowz", v);
  EXPECT_EQ(ids.back(), kUnkId);
  EXPECT_EQ(tokenize_word("qq", v), (std::vector<TokenId>{kUnkId, kUnkId}));
}

TEST(Encode, AlignmentAndPadding) {
  const auto v = small_vocab();
  const std::vector<std::string> words{"lowest", "newer"};
  const auto enc = encode(words, v, 12);
  ASSERT_EQ(enc.size(), 12u);
  EXPECT_EQ(enc.token_ids.front(), kClsId);
  EXPECT_FALSE(enc.word_index.front().has_value());
  std::size_t last_word = 0;
  for (std::size_t i = 0; i < enc.size(); ++i) {
    if (Vocabulary::is_special(enc.token_ids[i])) {
      EXPECT_FALSE(enc.word_index[i].has_value());
      continue;
    }
    ASSERT_TRUE(enc.word_index[i].has_value());
    EXPECT_GE(*enc.word_index[i], last_word);
    last_word = *enc.word_index[i];
  }
  EXPECT_EQ(enc.attention_mask.back(), 0);
  EXPECT_EQ(enc.token_ids.back(), kPadId);
  EXPECT_EQ(decode(enc.token_ids, v), "lowest newer");
}

TEST(Encode, TruncatesToMaxLen) {
  const auto v = small_vocab();
  const std::vector<std::string> words(20, "wider");
  const auto enc = encode(words, v, 8);
  EXPECT_EQ(enc.size(), 8u);
  EXPECT_EQ(enc.token_ids.back(), kSepId);
  EXPECT_EQ(enc.content_length(), 8u);
  EXPECT_THROW(encode(words, v, 2), std::invalid_argument);
}

TEST(EncodePair, SegmentsAndLongerSideTruncated) {
  const auto v = small_vocab();
  const std::vector<std::string> a{"low"};
  const std::vector<std::string> b(10, "low");
  const auto enc = encode_pair(a, b, v, 8);
  // budget 5: a keeps its single piece, b keeps four
  EXPECT_EQ(enc.token_ids[0], kClsId);
  EXPECT_EQ(enc.token_ids[2], kSepId);
  EXPECT_EQ(enc.segment_ids[3], 1);
  EXPECT_EQ(enc.token_ids[7], kSepId);
  EXPECT_EQ(enc.word_index[3], std::optional<std::size_t>(0));
  EXPECT_EQ(enc.word_index[6], std::optional<std::size_t>(3));
}

TEST(Decode, KeepsUnkAndMaskVisible) {
  const auto v = small_vocab();
  const std::vector<TokenId> ids{kClsId, kMaskId, kUnkId, kSepId, kPadId};
  EXPECT_EQ(decode(ids, v), "[MASK] [UNK]");
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto v = small_vocab();
  const auto path = std::filesystem::temp_directory_path() / "codemix_vocab_test.txt";
  v.save(path);
  EXPECT_EQ(Vocabulary::load(path), v);
}
