#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace codemix {

/// A maximal non-whitespace run inside a larger string, located both in
/// bytes and in Unicode scalar values.
struct WordSpan {
  std::size_t byte_begin = 0;
  std::size_t byte_end = 0;
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
};

bool is_space(char c) noexcept;

/// Splits on runs of ASCII whitespace; never yields empty words.
std::vector<std::string> split_words(std::string_view text);

std::vector<WordSpan> locate_words(std::string_view text);

std::size_t count_words(std::string_view text);

std::string join_words(const std::vector<std::string>& words, std::string_view sep = " ");

std::string_view trim(std::string_view text);

/// Decodes UTF-8 into scalar values. Throws std::invalid_argument on
/// malformed input.
std::u32string utf8_decode(std::string_view text);

std::string utf8_encode(std::u32string_view text);

std::string utf8_encode(char32_t cp);

/// Number of Unicode scalar values in a UTF-8 string.
std::size_t utf8_length(std::string_view text);

/// Substring by scalar-value offsets. Out-of-range requests are clamped.
std::string utf8_substr(std::string_view text, std::size_t char_begin, std::size_t char_count);

/// Byte offset of the given scalar-value offset (clamped to size()).
std::size_t utf8_byte_offset(std::string_view text, std::size_t char_offset);

std::vector<std::string> split_fields(std::string_view line, char sep);

/// 64-bit FNV-1a as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

}  // namespace codemix
