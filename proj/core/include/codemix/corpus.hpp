#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace codemix {

/// Raised for malformed or inconsistent dataset content.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Short lowercase ASCII language identifier ("en", "hi", ...).
class LanguageTag {
 public:
  LanguageTag() = default;
  explicit LanguageTag(std::string code);

  const std::string& code() const noexcept { return code_; }
  bool empty() const noexcept { return code_.empty(); }

  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;
  friend auto operator<=>(const LanguageTag&, const LanguageTag&) = default;

 private:
  std::string code_;
};

struct TaggedWord {
  std::string surface;
  LanguageTag tag;

  friend bool operator==(const TaggedWord&, const TaggedWord&) = default;
};

struct TaggedSentence {
  std::vector<TaggedWord> words;

  std::size_t size() const noexcept { return words.size(); }
  bool empty() const noexcept { return words.empty(); }
  std::vector<std::string> surfaces() const;

  friend bool operator==(const TaggedSentence&, const TaggedSentence&) = default;
};

/// Builds a sentence from parallel word/tag lists, validating both.
TaggedSentence make_tagged_sentence(const std::vector<std::string>& words,
                                    const std::vector<std::string>& tags);

enum class TaskKind { Mlm, Nli, Sa, Qa };
enum class Split { Train, Dev, Test };

std::string_view to_string(TaskKind kind) noexcept;
std::string_view to_string(Split split) noexcept;
TaskKind parse_task_kind(std::string_view name);
Split parse_split(std::string_view name);

/// Labels accepted for a classification task after filtering. NLI is
/// two-way; raw three-way NLI input may still carry "neutral" until
/// filter_nli_examples removes it.
const std::vector<std::string>& task_labels(TaskKind kind);
std::size_t label_index(TaskKind kind, std::string_view label);

struct ClassificationExample {
  std::string text_a;
  std::optional<std::string> text_b;
  std::string label;
  LanguageTag language;
  std::string provenance;
  /// XNLI-style match attribute; an explicit false excludes the example
  /// from filtered output.
  std::optional<bool> valid;

  friend bool operator==(const ClassificationExample&, const ClassificationExample&) = default;
};

struct QaExample {
  std::string context;
  std::string question;
  std::string answer_text;
  /// Offset in Unicode scalar values, not bytes.
  std::size_t answer_start = 0;
  LanguageTag language;

  friend bool operator==(const QaExample&, const QaExample&) = default;
};

/// Checks context[answer_start, answer_start + len(answer_text)) == answer_text.
bool answer_span_matches(const QaExample& example);

using ExampleList = std::variant<std::vector<TaggedSentence>,
                                 std::vector<ClassificationExample>,
                                 std::vector<QaExample>>;

struct Dataset {
  std::string id;
  TaskKind task = TaskKind::Mlm;
  Split split = Split::Train;
  ExampleList examples;

  std::size_t size() const noexcept;
  bool empty() const noexcept { return size() == 0; }

  const std::vector<TaggedSentence>& sentences() const;
  const std::vector<ClassificationExample>& classification() const;
  const std::vector<QaExample>& qa() const;
};

/// Throws DataError when the example list does not match the task kind or
/// an example breaks its own invariant.
void validate_dataset(const Dataset& dataset);

Dataset make_mlm_dataset(std::string id, Split split, std::vector<TaggedSentence> sentences);
Dataset make_classification_dataset(std::string id, TaskKind task, Split split,
                                    std::vector<ClassificationExample> examples);
Dataset make_qa_dataset(std::string id, Split split, std::vector<QaExample> examples);

/// Splits a premise on "##" and keeps trimmed segments with at least
/// min_words whitespace-delimited words.
std::vector<std::string> split_premise_dialogues(std::string_view premise, std::size_t min_words);

std::vector<ClassificationExample> filter_nli_examples(std::span<const ClassificationExample> examples,
                                                       const std::vector<std::string>& keep_labels);

/// Concatenates an English and an X-language train split of the same task.
Dataset merge_bilingual_dataset(const Dataset& en, const Dataset& x);

// File formats. Tagged corpora are JSONL {"words": [...], "tags": [...]};
// classification sets are TSV text_a [text_b] label language [valid];
// QA sets are JSONL mirroring QaExample.

std::vector<TaggedSentence> read_tagged_jsonl(const std::filesystem::path& path);
void write_tagged_jsonl(const std::filesystem::path& path, std::span<const TaggedSentence> sentences);
TaggedSentence parse_tagged_line(std::string_view line);
std::string format_tagged_line(const TaggedSentence& sentence);

std::vector<ClassificationExample> read_classification_tsv(const std::filesystem::path& path,
                                                           std::string_view provenance);
void write_classification_tsv(const std::filesystem::path& path,
                              std::span<const ClassificationExample> examples);
ClassificationExample parse_classification_line(std::string_view line, std::string_view provenance);
std::string format_classification_line(const ClassificationExample& example);

std::vector<QaExample> read_qa_jsonl(const std::filesystem::path& path);
void write_qa_jsonl(const std::filesystem::path& path, std::span<const QaExample> examples);
QaExample parse_qa_line(std::string_view line);
std::string format_qa_line(const QaExample& example);

/// Reads a dataset file according to the task kind (tagged JSONL for MLM,
/// TSV for NLI/SA, JSONL for QA) and validates it.
Dataset load_dataset(const std::filesystem::path& path, std::string id, TaskKind task, Split split);

}  // namespace codemix
