#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "codemix/corpus.hpp"

namespace codemix {

/// Two pseudo-languages over disjoint alphabets. Sentiment keywords are
/// drawn from each language's word list and never appear as filler.
struct SyntheticLexicon {
  std::vector<std::string> en_words;
  std::vector<std::string> x_words;
  std::vector<std::string> en_positive;
  std::vector<std::string> en_negative;
  std::vector<std::string> x_positive;
  std::vector<std::string> x_negative;
};

SyntheticLexicon make_synthetic_lexicon(std::size_t words_per_language, std::size_t keywords_per_class,
                                        std::uint64_t seed);

enum class SyntheticMix { English, Other, CodeSwitched };

/// Filler-only sentences. CodeSwitched sentences alternate language runs
/// and always contain at least one switch; lengths are in [min_len, max_len].
std::vector<TaggedSentence> synthetic_sentences(const SyntheticLexicon& lex, SyntheticMix mix, std::size_t count,
                                                std::size_t min_len, std::size_t max_len, std::uint64_t seed);

/// Three-way sentiment: one positive keyword, one negative keyword, or
/// none (neutral) planted at a random position.
std::vector<ClassificationExample> synthetic_sentiment(const SyntheticLexicon& lex, SyntheticMix mix,
                                                       std::size_t count, std::size_t min_len, std::size_t max_len,
                                                       std::uint64_t seed);

}  // namespace codemix
