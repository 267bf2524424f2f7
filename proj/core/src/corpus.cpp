#include "codemix/corpus.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "codemix/text.hpp"

namespace codemix {

using nlohmann::json;

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  auto in = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      f(line);
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

// Raw XNLI rows carry a third label that filtering removes.
bool accepted_raw_label(TaskKind task, std::string_view label) {
  const auto& labels = task_labels(task);
  if (std::find(labels.begin(), labels.end(), label) != labels.end()) return true;
  return task == TaskKind::Nli && label == "neutral";
}

}  // namespace

LanguageTag::LanguageTag(std::string code) : code_(std::move(code)) {
  if (code_.empty()) throw DataError("language tag must be non-empty");
  for (char c : code_) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
    if (!ok) throw DataError("language tag must be lowercase ASCII: '" + code_ + "'");
  }
}

std::vector<std::string> TaggedSentence::surfaces() const {
  std::vector<std::string> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(w.surface);
  return out;
}

TaggedSentence make_tagged_sentence(const std::vector<std::string>& words,
                                    const std::vector<std::string>& tags) {
  if (words.size() != tags.size()) {
    throw DataError("words/tags length mismatch (" + std::to_string(words.size()) + " vs " +
                    std::to_string(tags.size()) + ")");
  }
  TaggedSentence sentence;
  sentence.words.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto& w = words[i];
    if (w.empty()) throw DataError("empty word at position " + std::to_string(i));
    if (std::any_of(w.begin(), w.end(), is_space)) {
      throw DataError("word contains whitespace at position " + std::to_string(i));
    }
    sentence.words.push_back({w, LanguageTag(tags[i])});
  }
  return sentence;
}

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::Mlm: return "MLM";
    case TaskKind::Nli: return "NLI";
    case TaskKind::Sa: return "SA";
    case TaskKind::Qa: return "QA";
  }
  return "?";
}

std::string_view to_string(Split split) noexcept {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "mlm") return TaskKind::Mlm;
  if (lower == "nli") return TaskKind::Nli;
  if (lower == "sa") return TaskKind::Sa;
  if (lower == "qa") return TaskKind::Qa;
  throw DataError("unknown task kind '" + std::string(name) + "'");
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "dev") return Split::Dev;
  if (name == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(name) + "'");
}

const std::vector<std::string>& task_labels(TaskKind kind) {
  static const std::vector<std::string> nli{"entailment", "contradiction"};
  static const std::vector<std::string> sa{"positive", "negative", "neutral"};
  static const std::vector<std::string> none;
  switch (kind) {
    case TaskKind::Nli: return nli;
    case TaskKind::Sa: return sa;
    default: return none;
  }
}

std::size_t label_index(TaskKind kind, std::string_view label) {
  const auto& labels = task_labels(kind);
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) {
    throw DataError("label '" + std::string(label) + "' is not in the " + std::string(to_string(kind)) +
                    " label set");
  }
  return static_cast<std::size_t>(it - labels.begin());
}

bool answer_span_matches(const QaExample& example) {
  if (example.answer_start + utf8_length(example.answer_text) > utf8_length(example.context)) return false;
  return utf8_substr(example.context, example.answer_start, utf8_length(example.answer_text)) ==
         example.answer_text;
}

std::size_t Dataset::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, examples);
}

const std::vector<TaggedSentence>& Dataset::sentences() const {
  if (const auto* v = std::get_if<std::vector<TaggedSentence>>(&examples)) return *v;
  throw DataError("dataset '" + id + "' does not hold tagged sentences");
}

const std::vector<ClassificationExample>& Dataset::classification() const {
  if (const auto* v = std::get_if<std::vector<ClassificationExample>>(&examples)) return *v;
  throw DataError("dataset '" + id + "' does not hold classification examples");
}

const std::vector<QaExample>& Dataset::qa() const {
  if (const auto* v = std::get_if<std::vector<QaExample>>(&examples)) return *v;
  throw DataError("dataset '" + id + "' does not hold QA examples");
}

void validate_dataset(const Dataset& dataset) {
  switch (dataset.task) {
    case TaskKind::Mlm:
      for (const auto& s : dataset.sentences()) {
        for (const auto& w : s.words) {
          if (w.surface.empty() || std::any_of(w.surface.begin(), w.surface.end(), is_space)) {
            throw DataError("dataset '" + dataset.id + "': invalid word surface");
          }
        }
      }
      break;
    case TaskKind::Nli:
    case TaskKind::Sa:
      for (const auto& e : dataset.classification()) {
        if (!accepted_raw_label(dataset.task, e.label)) {
          throw DataError("dataset '" + dataset.id + "': label '" + e.label + "' not valid for " +
                          std::string(to_string(dataset.task)));
        }
      }
      break;
    case TaskKind::Qa:
      for (const auto& e : dataset.qa()) {
        if (!answer_span_matches(e)) {
          throw DataError("dataset '" + dataset.id + "': answer span does not match context");
        }
      }
      break;
  }
}

Dataset make_mlm_dataset(std::string id, Split split, std::vector<TaggedSentence> sentences) {
  return Dataset{std::move(id), TaskKind::Mlm, split, std::move(sentences)};
}

Dataset make_classification_dataset(std::string id, TaskKind task, Split split,
                                    std::vector<ClassificationExample> examples) {
  if (task != TaskKind::Nli && task != TaskKind::Sa) {
    throw DataError("classification datasets must be NLI or SA");
  }
  return Dataset{std::move(id), task, split, std::move(examples)};
}

Dataset make_qa_dataset(std::string id, Split split, std::vector<QaExample> examples) {
  return Dataset{std::move(id), TaskKind::Qa, split, std::move(examples)};
}

std::vector<std::string> split_premise_dialogues(std::string_view premise, std::size_t min_words) {
  if (min_words < 1) throw std::invalid_argument("min_words must be >= 1");
  std::vector<std::string> segments;
  std::size_t start = 0;
  while (start <= premise.size()) {
    const auto pos = premise.find("##", start);
    const auto end = pos == std::string_view::npos ? premise.size() : pos;
    const auto segment = trim(premise.substr(start, end - start));
    if (count_words(segment) >= min_words) segments.emplace_back(segment);
    if (pos == std::string_view::npos) break;
    start = pos + 2;
  }
  return segments;
}

std::vector<ClassificationExample> filter_nli_examples(std::span<const ClassificationExample> examples,
                                                       const std::vector<std::string>& keep_labels) {
  if (keep_labels.empty()) throw std::invalid_argument("keep_labels must be non-empty");
  std::vector<ClassificationExample> kept;
  for (const auto& e : examples) {
    if (e.valid.has_value() && !*e.valid) continue;
    if (std::find(keep_labels.begin(), keep_labels.end(), e.label) == keep_labels.end()) continue;
    kept.push_back(e);
  }
  return kept;
}

Dataset merge_bilingual_dataset(const Dataset& en, const Dataset& x) {
  if (en.task != x.task) {
    throw DataError("cannot merge " + std::string(to_string(en.task)) + " dataset '" + en.id + "' with " +
                    std::string(to_string(x.task)) + " dataset '" + x.id + "'");
  }
  if (en.split != Split::Train || x.split != Split::Train) {
    throw DataError("bilingual merge requires train splits");
  }
  Dataset merged{en.id + "+" + x.id, en.task, Split::Train, en.examples};
  std::visit(
      [&](auto& dst) {
        using List = std::decay_t<decltype(dst)>;
        const auto& src = std::get<List>(x.examples);
        dst.insert(dst.end(), src.begin(), src.end());
      },
      merged.examples);
  return merged;
}

// ---- tagged JSONL ----

TaggedSentence parse_tagged_line(std::string_view line) {
  const auto doc = json::parse(line);
  if (!doc.is_object() || !doc.contains("words") || !doc.contains("tags")) {
    throw DataError("tagged line needs 'words' and 'tags'");
  }
  return make_tagged_sentence(doc.at("words").get<std::vector<std::string>>(),
                              doc.at("tags").get<std::vector<std::string>>());
}

std::string format_tagged_line(const TaggedSentence& sentence) {
  json words = json::array();
  json tags = json::array();
  for (const auto& w : sentence.words) {
    words.push_back(w.surface);
    tags.push_back(w.tag.code());
  }
  return json{{"words", words}, {"tags", tags}}.dump();
}

std::vector<TaggedSentence> read_tagged_jsonl(const std::filesystem::path& path) {
  std::vector<TaggedSentence> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(parse_tagged_line(line)); });
  return out;
}

void write_tagged_jsonl(const std::filesystem::path& path, std::span<const TaggedSentence> sentences) {
  auto out = open_output(path);
  for (const auto& s : sentences) out << format_tagged_line(s) << '\n';
}

// ---- classification TSV ----

ClassificationExample parse_classification_line(std::string_view line, std::string_view provenance) {
  const auto fields = split_fields(line, '\t');
  ClassificationExample e;
  e.provenance = std::string(provenance);
  switch (fields.size()) {
    case 3:
      e.text_a = fields[0];
      e.label = fields[1];
      e.language = LanguageTag(fields[2]);
      break;
    case 4:
    case 5:
      e.text_a = fields[0];
      if (!fields[1].empty()) e.text_b = fields[1];
      e.label = fields[2];
      e.language = LanguageTag(fields[3]);
      if (fields.size() == 5) {
        if (fields[4] == "true" || fields[4] == "True" || fields[4] == "1") {
          e.valid = true;
        } else if (fields[4] == "false" || fields[4] == "False" || fields[4] == "0") {
          e.valid = false;
        } else {
          throw DataError("validity column must be true/false");
        }
      }
      break;
    default:
      throw DataError("expected 3 to 5 tab-separated columns, got " + std::to_string(fields.size()));
  }
  if (e.text_a.empty()) throw DataError("empty text_a");
  if (e.label.empty()) throw DataError("empty label");
  return e;
}

std::string format_classification_line(const ClassificationExample& e) {
  std::string line = e.text_a;
  if (e.text_b || e.valid) {
    line += '\t';
    line += e.text_b.value_or("");
  }
  line += '\t' + e.label + '\t' + e.language.code();
  if (e.valid) line += *e.valid ? "\ttrue" : "\tfalse";
  return line;
}

std::vector<ClassificationExample> read_classification_tsv(const std::filesystem::path& path,
                                                           std::string_view provenance) {
  std::vector<ClassificationExample> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(parse_classification_line(line, provenance)); });
  return out;
}

void write_classification_tsv(const std::filesystem::path& path,
                              std::span<const ClassificationExample> examples) {
  auto out = open_output(path);
  for (const auto& e : examples) out << format_classification_line(e) << '\n';
}

// ---- QA JSONL ----

QaExample parse_qa_line(std::string_view line) {
  const auto doc = json::parse(line);
  QaExample e;
  e.context = doc.at("context").get<std::string>();
  e.question = doc.at("question").get<std::string>();
  e.answer_text = doc.at("answer_text").get<std::string>();
  e.answer_start = doc.at("answer_start").get<std::size_t>();
  e.language = LanguageTag(doc.at("language").get<std::string>());
  if (!answer_span_matches(e)) throw DataError("answer_text does not match context at answer_start");
  return e;
}

std::string format_qa_line(const QaExample& e) {
  return json{{"context", e.context},
              {"question", e.question},
              {"answer_text", e.answer_text},
              {"answer_start", e.answer_start},
              {"language", e.language.code()}}
      .dump();
}

std::vector<QaExample> read_qa_jsonl(const std::filesystem::path& path) {
  std::vector<QaExample> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(parse_qa_line(line)); });
  return out;
}

void write_qa_jsonl(const std::filesystem::path& path, std::span<const QaExample> examples) {
  auto out = open_output(path);
  for (const auto& e : examples) out << format_qa_line(e) << '\n';
}

Dataset load_dataset(const std::filesystem::path& path, std::string id, TaskKind task, Split split) {
  Dataset ds;
  switch (task) {
    case TaskKind::Mlm:
      ds = make_mlm_dataset(std::move(id), split, read_tagged_jsonl(path));
      break;
    case TaskKind::Nli:
    case TaskKind::Sa: {
      auto examples = read_classification_tsv(path, id);
      ds = make_classification_dataset(std::move(id), task, split, std::move(examples));
      break;
    }
    case TaskKind::Qa:
      ds = make_qa_dataset(std::move(id), split, read_qa_jsonl(path));
      break;
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace codemix
