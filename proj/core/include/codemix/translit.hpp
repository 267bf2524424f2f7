#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "codemix/corpus.hpp"

namespace codemix {

/// Pure word-to-word mapping used for transliteration or word-level
/// translation.
class WordTransducer {
 public:
  virtual ~WordTransducer() = default;
  virtual std::string name() const = 0;
  /// Must return a non-empty string without whitespace.
  virtual std::string transduce(std::string_view word) const = 0;
};

class IdentityTransducer final : public WordTransducer {
 public:
  std::string name() const override { return "identity"; }
  std::string transduce(std::string_view word) const override { return std::string(word); }
};

/// ASCII letters to upper case; other bytes pass through.
class UppercaseTransducer final : public WordTransducer {
 public:
  std::string name() const override { return "uppercase"; }
  std::string transduce(std::string_view word) const override;
};

/// Doubles every ASCII vowel ("desk" -> "deesk").
class VowelDoublingTransducer final : public WordTransducer {
 public:
  std::string name() const override { return "vowel-doubling"; }
  std::string transduce(std::string_view word) const override;
};

/// Replays cached transliterations from a two-column TSV. Words missing
/// from the table pass through unchanged.
class TableTransducer final : public WordTransducer {
 public:
  explicit TableTransducer(std::map<std::string, std::string, std::less<>> table, std::string name = "table");
  static TableTransducer load(const std::filesystem::path& path);

  std::string name() const override { return name_; }
  std::string transduce(std::string_view word) const override;
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::map<std::string, std::string, std::less<>> table_;
  std::string name_;
};

/// Applies `t` then `u`.
class ComposedTransducer final : public WordTransducer {
 public:
  ComposedTransducer(std::shared_ptr<const WordTransducer> t, std::shared_ptr<const WordTransducer> u);
  std::string name() const override;
  std::string transduce(std::string_view word) const override;

 private:
  std::shared_ptr<const WordTransducer> first_;
  std::shared_ptr<const WordTransducer> second_;
};

std::unique_ptr<WordTransducer> make_transducer(std::string_view name);

class SpanAlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpanCorrection {
  std::string new_context;
  std::string new_question;
  std::string new_answer;
  std::size_t new_start = 0;
  bool verified = false;

  /// Rebuilds a QaExample in the example's language.
  QaExample to_example(const LanguageTag& language) const;
};

/// Maps every whitespace-delimited word through `t`, keeping the original
/// whitespace between words byte for byte.
std::string transliterate_text(std::string_view text, const WordTransducer& t);

/// Piecewise transliteration of context, question and answer. The new
/// answer offset is the transliterated length of everything before the
/// answer's first word; verification re-extracts the span. Throws
/// SpanAlignmentError when the answer does not start and end on word
/// boundaries, DataError when the input span is already inconsistent.
SpanCorrection transliterate_qa_example(const QaExample& example, const WordTransducer& t);

ClassificationExample transliterate_classification_example(const ClassificationExample& example,
                                                           const WordTransducer& t);

}  // namespace codemix
