#include <gtest/gtest.h>

#include "codemix/text.hpp"

using namespace codemix;

TEST(Text, SplitWordsCollapsesWhitespaceRuns) {
  EXPECT_EQ(split_words("  put\tthese  files\n"), (std::vector<std::string>{"put", "these", "files"}));
  EXPECT_TRUE(split_words(" \t ").empty());
  EXPECT_EQ(count_words("CLERK : Yeh ?"), 4u);
}

TEST(Text, LocateWordsCountsScalarValues) {
  // "café" is five bytes, four scalar values
  const auto spans = locate_words("café au lait");
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0].byte_end, 5u);
  EXPECT_EQ(spans[0].char_end, 4u);
  EXPECT_EQ(spans[1].char_begin, 5u);
  EXPECT_EQ(spans[1].byte_begin, 6u);
}

TEST(Text, Utf8RoundTrip) {
  const std::string s = "नमस्ते world";
  EXPECT_EQ(utf8_encode(utf8_decode(s)), s);
  EXPECT_EQ(utf8_length(s), utf8_decode(s).size());
  EXPECT_EQ(utf8_substr(s, 7, 5), "world");
  EXPECT_THROW(utf8_decode("\xC3"), std::invalid_argument);
  EXPECT_THROW(utf8_decode("\xC3\x41"), std::invalid_argument);
}

TEST(Text, TrimAndFields) {
  EXPECT_EQ(trim("  a b  "), "a b");
  EXPECT_EQ(split_fields("a\t\tb", '\t'), (std::vector<std::string>{"a", "", "b"}));
}

TEST(Text, FnvMatchesPublishedVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
