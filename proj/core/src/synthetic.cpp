#include "codemix/synthetic.hpp"

#include <set>
#include <stdexcept>

#include "codemix/random.hpp"

namespace codemix {

namespace {

constexpr std::string_view kEnConsonants = "bcdfgh";
constexpr std::string_view kEnVowels = "ae";
constexpr std::string_view kXConsonants = "kmnprst";
constexpr std::string_view kXVowels = "iou";

std::vector<std::string> make_words(std::string_view consonants, std::string_view vowels, std::size_t n, Rng& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  std::size_t attempts = 0;
  while (out.size() < n) {
    if (++attempts > 1000 * (n + 1)) throw std::invalid_argument("cannot generate that many distinct words");
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += consonants[rng.below(consonants.size())];
      w += vowels[rng.below(vowels.size())];
    }
    if (seen.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

const std::string& pick(const std::vector<std::string>& words, Rng& rng) { return words[rng.below(words.size())]; }

TaggedSentence draw_sentence(const SyntheticLexicon& lex, SyntheticMix mix, std::size_t len, Rng& rng) {
  const LanguageTag en("en");
  const LanguageTag x("x");
  TaggedSentence s;
  bool english = mix != SyntheticMix::Other;
  if (mix == SyntheticMix::CodeSwitched) english = rng.below(2) == 0;
  // one forced switch somewhere in the sentence keeps it code-switched
  const std::size_t forced = len > 1 ? 1 + rng.below(len - 1) : len;
  for (std::size_t i = 0; i < len; ++i) {
    if (mix == SyntheticMix::CodeSwitched && i > 0 && (i == forced || rng.uniform() < 0.3)) english = !english;
    s.words.push_back(english ? TaggedWord{pick(lex.en_words, rng), en} : TaggedWord{pick(lex.x_words, rng), x});
  }
  return s;
}

std::size_t draw_length(std::size_t min_len, std::size_t max_len, Rng& rng) {
  if (min_len == 0 || min_len > max_len) throw std::invalid_argument("need 0 < min_len <= max_len");
  return min_len + rng.below(max_len - min_len + 1);
}

}  // namespace

SyntheticLexicon make_synthetic_lexicon(std::size_t words_per_language, std::size_t keywords_per_class,
                                        std::uint64_t seed) {
  if (words_per_language <= 2 * keywords_per_class || keywords_per_class == 0) {
    throw std::invalid_argument("need keywords_per_class > 0 and room for filler words");
  }
  Rng rng(seed);
  SyntheticLexicon lex;
  auto split = [&](std::vector<std::string> all, std::vector<std::string>& filler, std::vector<std::string>& pos,
                   std::vector<std::string>& neg) {
    pos.assign(all.begin(), all.begin() + static_cast<long>(keywords_per_class));
    neg.assign(all.begin() + static_cast<long>(keywords_per_class),
               all.begin() + static_cast<long>(2 * keywords_per_class));
    filler.assign(all.begin() + static_cast<long>(2 * keywords_per_class), all.end());
  };
  split(make_words(kEnConsonants, kEnVowels, words_per_language, rng), lex.en_words, lex.en_positive,
        lex.en_negative);
  split(make_words(kXConsonants, kXVowels, words_per_language, rng), lex.x_words, lex.x_positive, lex.x_negative);
  return lex;
}

std::vector<TaggedSentence> synthetic_sentences(const SyntheticLexicon& lex, SyntheticMix mix, std::size_t count,
                                                std::size_t min_len, std::size_t max_len, std::uint64_t seed) {
  if (mix == SyntheticMix::CodeSwitched && min_len < 2) throw std::invalid_argument("code-switched sentences need min_len >= 2");
  Rng rng(seed);
  std::vector<TaggedSentence> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(draw_sentence(lex, mix, draw_length(min_len, max_len, rng), rng));
  return out;
}

std::vector<ClassificationExample> synthetic_sentiment(const SyntheticLexicon& lex, SyntheticMix mix,
                                                       std::size_t count, std::size_t min_len, std::size_t max_len,
                                                       std::uint64_t seed) {
  Rng rng(seed);
  const auto& labels = task_labels(TaskKind::Sa);
  std::vector<ClassificationExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = draw_length(std::max<std::size_t>(min_len, 2), std::max<std::size_t>(max_len, 2), rng);
    auto s = draw_sentence(lex, mix, len, rng);
    const std::size_t label = rng.below(labels.size());
    const std::size_t pos = rng.below(s.size());
    const bool english = s.words[pos].tag.code() == "en";
    if (labels[label] == "positive") s.words[pos].surface = pick(english ? lex.en_positive : lex.x_positive, rng);
    if (labels[label] == "negative") s.words[pos].surface = pick(english ? lex.en_negative : lex.x_negative, rng);
    ClassificationExample ex;
    ex.text_a = [&] {
      std::string t;
      for (const auto& w : s.words) t += (t.empty() ? "" : " ") + w.surface;
      return t;
    }();
    ex.label = labels[label];
    ex.language = LanguageTag(mix == SyntheticMix::English ? "en" : mix == SyntheticMix::Other ? "x" : "en-x");
    ex.provenance = "synthetic";
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace codemix
