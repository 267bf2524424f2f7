#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "codemix/text.hpp"
#include "codemix/translit.hpp"

using namespace codemix;

using Table = std::map<std::string, std::string, std::less<>>;

namespace {

QaExample desk_qa() {
  return QaExample{"Put these  files on the desk .", "Where do the files go ?", "the desk", 20, LanguageTag("en")};
}

}  // namespace

TEST(Transducers, Builtins) {
  EXPECT_EQ(UppercaseTransducer().transduce("desk9é"), "DESK9é");
  EXPECT_EQ(VowelDoublingTransducer().transduce("desk"), "deesk");
  EXPECT_EQ(make_transducer("identity")->transduce("x"), "x");
  EXPECT_THROW(make_transducer("google"), std::invalid_argument);
}

TEST(Transducers, TableAndComposition) {
  TableTransducer table(Table{{"yeh", "यह"}, {"desk", "डेस्क"}});
  EXPECT_EQ(table.transduce("desk"), "डेस्क");
  EXPECT_EQ(table.transduce("unknown"), "unknown");
  ComposedTransducer both(std::make_shared<UppercaseTransducer>(), std::make_shared<VowelDoublingTransducer>());
  EXPECT_EQ(both.transduce("desk"), "DEESK");
  EXPECT_EQ(both.name(), "uppercase+vowel-doubling");
  EXPECT_THROW(TableTransducer(Table{{"a", "b c"}}), DataError);
}

TEST(Transducers, TableLoadsTsv) {
  const auto path = std::filesystem::temp_directory_path() / "codemix_table.tsv";
  {
    std::ofstream out(path);
    out << "files\tफ़ाइलें\n\nko\tको\n";
  }
  const auto t = TableTransducer::load(path);
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(t.transduce("ko"), "को");
}

TEST(TransliterateText, PreservesWhitespace) {
  EXPECT_EQ(transliterate_text("  a\tbe  ", VowelDoublingTransducer()), "  aa\tbee  ");
  EXPECT_EQ(transliterate_text("", UppercaseTransducer()), "");
}

TEST(SpanCorrection, IdentityIsByteIdentical) {
  const auto ex = desk_qa();
  const auto out = transliterate_qa_example(ex, IdentityTransducer());
  EXPECT_TRUE(out.verified);
  EXPECT_EQ(out.new_context, ex.context);
  EXPECT_EQ(out.new_question, ex.question);
  EXPECT_EQ(out.new_start, ex.answer_start);
}

TEST(SpanCorrection, LengthChangingTransducerShiftsOffset) {
  const auto out = transliterate_qa_example(desk_qa(), VowelDoublingTransducer());
  // "Puut theesee  fiilees oon " is 26 scalar values
  EXPECT_EQ(out.new_start, 26u);
  EXPECT_EQ(out.new_answer, "thee deesk");
  EXPECT_TRUE(out.verified);
  EXPECT_EQ(utf8_substr(out.new_context, out.new_start, utf8_length(out.new_answer)), out.new_answer);
}

TEST(SpanCorrection, MultibyteTargetsCountScalarValues) {
  TableTransducer table(Table{{"Put", "रखो"}, {"these", "ये"}});
  const auto out = transliterate_qa_example(desk_qa(), table);
  EXPECT_TRUE(out.verified);
  EXPECT_EQ(out.new_start, 3u + 1u + 2u + 2u + 5u + 1u + 2u + 1u);
  EXPECT_EQ(out.to_example(LanguageTag("hi")).answer_start, out.new_start);
  EXPECT_TRUE(answer_span_matches(out.to_example(LanguageTag("hi"))));
}

TEST(SpanCorrection, RejectsMisalignedAndInconsistent) {
  auto ex = desk_qa();
  ex.answer_text = "he desk";
  ex.answer_start = 21;
  EXPECT_THROW(transliterate_qa_example(ex, IdentityTransducer()), SpanAlignmentError);
  ex = desk_qa();
  ex.answer_start = 3;
  EXPECT_THROW(transliterate_qa_example(ex, IdentityTransducer()), DataError);
}

TEST(Classification, BothTextsTransliterated) {
  ClassificationExample ex{"a b", std::string("c"), "entailment", LanguageTag("en"), "p", std::nullopt};
  const auto out = transliterate_classification_example(ex, UppercaseTransducer());
  EXPECT_EQ(out.text_a, "A B");
  EXPECT_EQ(out.text_b, std::optional<std::string>("C"));
  EXPECT_EQ(out.label, ex.label);
}
