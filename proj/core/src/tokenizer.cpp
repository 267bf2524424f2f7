#include "codemix/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "codemix/text.hpp"

namespace codemix {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

Vocabulary::Vocabulary() : Vocabulary(special_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw std::invalid_argument("vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("vocabulary contains an empty token");
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

namespace {

std::string_view strip_continuation(std::string_view piece) {
  if (piece.starts_with(kContinuation)) piece.remove_prefix(kContinuation.size());
  return piece;
}

// Splits a word into its initial-form first character and continuation-form
// remaining characters.
std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols;
  const auto cps = utf8_decode(word);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    auto ch = utf8_encode(cps[i]);
    symbols.push_back(i == 0 ? ch : std::string(kContinuation) + ch);
  }
  return symbols;
}

}  // namespace

Vocabulary train_vocabulary_from_words(std::span<const std::string> words, std::size_t target_size,
                                       std::uint64_t /*seed*/) {
  if (words.empty()) throw std::invalid_argument("cannot train a vocabulary on an empty corpus");

  std::map<std::string, std::size_t> freq;
  for (const auto& w : words) {
    if (!w.empty()) ++freq[w];
  }
  if (freq.empty()) throw std::invalid_argument("cannot train a vocabulary on an empty corpus");

  std::vector<std::vector<std::string>> segmented;
  std::vector<std::size_t> counts;
  std::set<std::string> alphabet;
  std::set<char32_t> distinct_chars;
  for (const auto& [word, n] : freq) {
    auto symbols = initial_symbols(word);
    for (const auto& s : symbols) alphabet.insert(s);
    for (char32_t c : utf8_decode(word)) distinct_chars.insert(c);
    segmented.push_back(std::move(symbols));
    counts.push_back(n);
  }

  const std::size_t minimum = special_tokens().size() + alphabet.size();
  if (target_size < minimum) {
    throw std::invalid_argument("target_size " + std::to_string(target_size) + " is below the " +
                                std::to_string(minimum) + " entries needed for specials and base symbols (" +
                                std::to_string(distinct_chars.size()) + " distinct characters)");
  }

  std::vector<std::string> tokens = special_tokens();
  std::set<std::string> present(tokens.begin(), tokens.end());
  for (const auto& s : alphabet) {
    tokens.push_back(s);
    present.insert(s);
  }

  while (tokens.size() < target_size) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (std::size_t w = 0; w < segmented.size(); ++w) {
      const auto& syms = segmented[w];
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) pairs[{syms[i], syms[i + 1]}] += counts[w];
    }

    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    std::string best_plain;
    std::string best_token;
    for (const auto& [pair, n] : pairs) {
      if (n < 2) continue;
      const std::string merged = pair.first + std::string(strip_continuation(pair.second));
      const std::string plain = std::string(strip_continuation(pair.first)) + std::string(strip_continuation(pair.second));
      const bool better = n > best_count ||
                          (n == best_count && (plain < best_plain || (plain == best_plain && merged < best_token)));
      if (best == nullptr || better) {
        best = &pair;
        best_count = n;
        best_plain = plain;
        best_token = merged;
      }
    }
    if (best == nullptr) break;

    const auto left = best->first;
    const auto right = best->second;
    for (auto& syms : segmented) {
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
          next.push_back(best_token);
          ++i;
        } else {
          next.push_back(syms[i]);
        }
      }
      syms = std::move(next);
    }
    if (present.insert(best_token).second) tokens.push_back(best_token);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary train_vocabulary(std::span<const TaggedSentence> corpus, std::size_t target_size, std::uint64_t seed) {
  std::vector<std::string> words;
  for (const auto& s : corpus) {
    for (const auto& w : s.words) words.push_back(w.surface);
  }
  return train_vocabulary_from_words(words, target_size, seed);
}

std::size_t Encoding::content_length() const noexcept {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
}

std::vector<TokenId> tokenize_word(std::string_view word, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  const auto cps = utf8_decode(word);
  std::size_t pos = 0;
  while (pos < cps.size()) {
    std::optional<TokenId> match;
    std::size_t match_end = pos + 1;
    for (std::size_t end = cps.size(); end > pos; --end) {
      std::string piece = utf8_encode(std::u32string_view(cps).substr(pos, end - pos));
      if (pos > 0) piece.insert(0, kContinuation);
      if (auto id = vocab.find(piece)) {
        match = id;
        match_end = end;
        break;
      }
    }
    ids.push_back(match.value_or(kUnkId));
    pos = match_end;
  }
  return ids;
}

namespace {

struct Piece {
  TokenId id;
  std::size_t word;
};

std::vector<Piece> tokenize_words(std::span<const std::string> words, const Vocabulary& vocab) {
  std::vector<Piece> pieces;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (TokenId id : tokenize_word(words[w], vocab)) pieces.push_back({id, w});
  }
  return pieces;
}

void push(Encoding& enc, TokenId id, std::optional<std::size_t> word, std::uint8_t segment) {
  enc.token_ids.push_back(id);
  enc.word_index.push_back(word);
  enc.segment_ids.push_back(segment);
  enc.attention_mask.push_back(id == kPadId ? 0 : 1);
}

void pad_to(Encoding& enc, std::size_t max_len) {
  while (enc.size() < max_len) push(enc, kPadId, std::nullopt, 0);
}

void check_max_len(std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
}

}  // namespace

Encoding encode(std::span<const std::string> words, const Vocabulary& vocab, std::size_t max_len) {
  check_max_len(max_len);
  auto pieces = tokenize_words(words, vocab);
  if (pieces.size() > max_len - 2) pieces.resize(max_len - 2);
  Encoding enc;
  push(enc, kClsId, std::nullopt, 0);
  for (const auto& p : pieces) push(enc, p.id, p.word, 0);
  push(enc, kSepId, std::nullopt, 0);
  pad_to(enc, max_len);
  return enc;
}

Encoding encode(const TaggedSentence& sentence, const Vocabulary& vocab, std::size_t max_len) {
  const auto words = sentence.surfaces();
  return encode(std::span<const std::string>(words), vocab, max_len);
}

Encoding encode_pair(std::span<const std::string> words_a, std::span<const std::string> words_b,
                     const Vocabulary& vocab, std::size_t max_len) {
  check_max_len(max_len);
  auto a = tokenize_words(words_a, vocab);
  auto b = tokenize_words(words_b, vocab);
  const std::size_t budget = max_len >= 3 ? max_len - 3 : 0;
  while (a.size() + b.size() > budget) {
    if (a.size() > b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }
  Encoding enc;
  push(enc, kClsId, std::nullopt, 0);
  for (const auto& p : a) push(enc, p.id, p.word, 0);
  push(enc, kSepId, std::nullopt, 0);
  for (const auto& p : b) push(enc, p.id, p.word, 1);
  push(enc, kSepId, std::nullopt, 1);
  pad_to(enc, max_len);
  return enc;
}

Encoding encode_text(std::string_view text_a, const std::optional<std::string>& text_b, const Vocabulary& vocab,
                     std::size_t max_len) {
  const auto a = split_words(text_a);
  if (!text_b) return encode(std::span<const std::string>(a), vocab, max_len);
  const auto b = split_words(*text_b);
  return encode_pair(a, b, vocab, max_len);
}

std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const auto& tok = vocab.token(id);
    if (id == kPadId || id == kClsId || id == kSepId) continue;
    if (!Vocabulary::is_special(id) && std::string_view(tok).starts_with(kContinuation)) {
      out += strip_continuation(tok);
      continue;
    }
    if (!out.empty()) out += ' ';
    out += tok;
  }
  return out;
}

}  // namespace codemix
