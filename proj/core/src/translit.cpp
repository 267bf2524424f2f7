#include "codemix/translit.hpp"

#include <algorithm>
#include <fstream>

#include "codemix/text.hpp"

namespace codemix {

namespace {

bool is_vowel(char c) {
  switch (c) {
    case 'a': case 'e': case 'i': case 'o': case 'u':
    case 'A': case 'E': case 'I': case 'O': case 'U':
      return true;
    default:
      return false;
  }
}

std::string checked(const WordTransducer& t, std::string_view word) {
  auto out = t.transduce(word);
  if (out.empty() || std::any_of(out.begin(), out.end(), is_space)) {
    throw std::runtime_error("transducer '" + t.name() + "' produced an empty or whitespace-bearing word for '" +
                             std::string(word) + "'");
  }
  return out;
}

}  // namespace

std::string UppercaseTransducer::transduce(std::string_view word) const {
  std::string out(word);
  for (auto& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  }
  return out;
}

std::string VowelDoublingTransducer::transduce(std::string_view word) const {
  std::string out;
  out.reserve(word.size() * 2);
  for (char c : word) {
    out.push_back(c);
    if (is_vowel(c)) out.push_back(c);
  }
  return out;
}

TableTransducer::TableTransducer(std::map<std::string, std::string, std::less<>> table, std::string name)
    : table_(std::move(table)), name_(std::move(name)) {
  for (const auto& [src, dst] : table_) {
    if (src.empty() || dst.empty() || std::any_of(dst.begin(), dst.end(), is_space) ||
        std::any_of(src.begin(), src.end(), is_space)) {
      throw DataError("transliteration table entries must be single non-empty words");
    }
  }
}

TableTransducer TableTransducer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::string, std::less<>> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line, '\t');
    if (fields.size() != 2) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected source<TAB>target");
    }
    table[fields[0]] = fields[1];
  }
  return TableTransducer(std::move(table), "table:" + path.filename().string());
}

std::string TableTransducer::transduce(std::string_view word) const {
  const auto it = table_.find(word);
  return it == table_.end() ? std::string(word) : it->second;
}

ComposedTransducer::ComposedTransducer(std::shared_ptr<const WordTransducer> t,
                                       std::shared_ptr<const WordTransducer> u)
    : first_(std::move(t)), second_(std::move(u)) {}

std::string ComposedTransducer::name() const { return first_->name() + "+" + second_->name(); }

std::string ComposedTransducer::transduce(std::string_view word) const {
  return second_->transduce(first_->transduce(word));
}

std::unique_ptr<WordTransducer> make_transducer(std::string_view name) {
  if (name == "identity") return std::make_unique<IdentityTransducer>();
  if (name == "uppercase") return std::make_unique<UppercaseTransducer>();
  if (name == "vowel-doubling") return std::make_unique<VowelDoublingTransducer>();
  throw std::invalid_argument("unknown transducer '" + std::string(name) + "'");
}

QaExample SpanCorrection::to_example(const LanguageTag& language) const {
  return QaExample{new_context, new_question, new_answer, new_start, language};
}

std::string transliterate_text(std::string_view text, const WordTransducer& t) {
  std::string out;
  out.reserve(text.size());
  std::size_t cursor = 0;
  for (const auto& span : locate_words(text)) {
    out.append(text.substr(cursor, span.byte_begin - cursor));
    out += checked(t, text.substr(span.byte_begin, span.byte_end - span.byte_begin));
    cursor = span.byte_end;
  }
  out.append(text.substr(cursor));
  return out;
}

SpanCorrection transliterate_qa_example(const QaExample& example, const WordTransducer& t) {
  if (!answer_span_matches(example)) throw DataError("answer text does not match context at answer_start");
  const std::size_t answer_len = utf8_length(example.answer_text);
  const std::size_t answer_end = example.answer_start + answer_len;
  if (answer_len == 0) throw SpanAlignmentError("empty answer");

  const auto words = locate_words(example.context);
  const auto first = std::find_if(words.begin(), words.end(),
                                  [&](const WordSpan& w) { return w.char_begin == example.answer_start; });
  const auto last = std::find_if(words.begin(), words.end(),
                                 [&](const WordSpan& w) { return w.char_end == answer_end; });
  if (first == words.end() || last == words.end() || last < first) {
    throw SpanAlignmentError("answer span [" + std::to_string(example.answer_start) + ", " +
                             std::to_string(answer_end) + ") does not fall on word boundaries");
  }

  SpanCorrection out;
  const std::size_t prefix_bytes = first->byte_begin;
  const std::string new_prefix = transliterate_text(std::string_view(example.context).substr(0, prefix_bytes), t);
  out.new_start = utf8_length(new_prefix);
  out.new_context = transliterate_text(example.context, t);
  out.new_question = transliterate_text(example.question, t);
  out.new_answer = transliterate_text(example.answer_text, t);
  out.verified = utf8_substr(out.new_context, out.new_start, utf8_length(out.new_answer)) == out.new_answer;
  return out;
}

ClassificationExample transliterate_classification_example(const ClassificationExample& example,
                                                           const WordTransducer& t) {
  ClassificationExample out = example;
  out.text_a = transliterate_text(example.text_a, t);
  if (example.text_b) out.text_b = transliterate_text(*example.text_b, t);
  return out;
}

}  // namespace codemix
