#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "codemix/corpus.hpp"

namespace codemix {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr TokenId kNumSpecials = 5;

/// Prefix carried by subwords that continue a word.
inline constexpr std::string_view kContinuation = "##";

/// Immutable subword inventory. Specials occupy ids 0..4 in the order
/// PAD, UNK, CLS, SEP, MASK.
class Vocabulary {
 public:
  Vocabulary();
  /// Validates that the first five tokens are the specials and that all
  /// tokens are unique.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  static bool is_special(TokenId id) noexcept { return id >= 0 && id < kNumSpecials; }

  /// Plain text, one token per line, specials first.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

const std::vector<std::string>& special_tokens();

/// Greedy pair-merge training. Pairs must occur at least twice to merge;
/// the most frequent pair wins, ties going to the lexicographically
/// smallest merged string (continuation markers stripped). The result is
/// fully determined by corpus order; `seed` is accepted for interface
/// stability and recorded nowhere.
Vocabulary train_vocabulary(std::span<const TaggedSentence> corpus, std::size_t target_size,
                            std::uint64_t seed = 0);
Vocabulary train_vocabulary_from_words(std::span<const std::string> words, std::size_t target_size,
                                       std::uint64_t seed = 0);

struct Encoding {
  std::vector<TokenId> token_ids;
  std::vector<std::optional<std::size_t>> word_index;
  std::vector<std::uint8_t> segment_ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t size() const noexcept { return token_ids.size(); }
  std::size_t content_length() const noexcept;

  friend bool operator==(const Encoding&, const Encoding&) = default;
};

/// Longest-match-first subword split of one word. Characters with no
/// matching piece become UNK individually.
std::vector<TokenId> tokenize_word(std::string_view word, const Vocabulary& vocab);

/// CLS words SEP PAD...
Encoding encode(std::span<const std::string> words, const Vocabulary& vocab, std::size_t max_len);
Encoding encode(const TaggedSentence& sentence, const Vocabulary& vocab, std::size_t max_len);
/// CLS a SEP b SEP PAD...; the longer segment is truncated first.
Encoding encode_pair(std::span<const std::string> words_a, std::span<const std::string> words_b,
                     const Vocabulary& vocab, std::size_t max_len);
Encoding encode_text(std::string_view text_a, const std::optional<std::string>& text_b, const Vocabulary& vocab,
                     std::size_t max_len);

/// Joins subwords back into space-separated words. PAD, CLS and SEP are
/// dropped; UNK and MASK render as their token strings.
std::string decode(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace codemix
