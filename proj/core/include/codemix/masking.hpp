#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codemix/corpus.hpp"
#include "codemix/tokenizer.hpp"

namespace codemix {

/// Label value for positions that carry no MLM target.
inline constexpr TokenId kIgnoreLabel = -100;

enum class MaskingKind { Standard, SwitchBoundary };

std::string_view to_string(MaskingKind kind) noexcept;
MaskingKind parse_masking_kind(std::string_view name);

struct Corruption {
  double mask = 0.8;
  double random = 0.1;
  double keep = 0.1;
};

struct MaskingPolicy {
  MaskingKind kind = MaskingKind::Standard;
  double select_rate = 0.15;
  Corruption corruption{};
  /// Select whole words and corrupt all of their subwords together.
  bool whole_word = false;

  /// Throws std::invalid_argument when a probability is out of range or the
  /// corruption triple does not sum to 1 within 1e-9.
  void validate() const;
};

struct MaskedLmExample {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> labels;
  std::vector<std::size_t> selected;

  friend bool operator==(const MaskedLmExample&, const MaskedLmExample&) = default;
};

/// Word positions that have a neighbour with a different language tag.
/// Sorted ascending.
std::vector<std::size_t> boundary_word_indices(const TaggedSentence& sentence);

/// Corrupts one encoded sentence. Returns std::nullopt (skipped) when the
/// policy is SwitchBoundary and the sentence has no switch boundary.
/// Throws std::invalid_argument when the encoding refers to words the
/// sentence does not have.
std::optional<MaskedLmExample> make_mlm_example(const Encoding& encoding, const TaggedSentence& sentence,
                                                const MaskingPolicy& policy, std::size_t vocab_size,
                                                std::uint64_t rng_seed);

struct MaskedCorpus {
  std::vector<MaskedLmExample> examples;
  /// Index into the source corpus for each produced example.
  std::vector<std::size_t> source_index;
  std::vector<Encoding> encodings;
  std::size_t skipped = 0;
};

/// Encodes and masks a whole corpus; sentence i uses seed base_seed + i.
MaskedCorpus mask_corpus(std::span<const TaggedSentence> corpus, const Vocabulary& vocab, std::size_t max_len,
                         const MaskingPolicy& policy, std::uint64_t base_seed);

std::string format_masked_line(const MaskedLmExample& example, std::string_view config_digest = {});
void write_masked_jsonl(const std::filesystem::path& path, std::span<const MaskedLmExample> examples,
                        std::string_view config_digest = {});

}  // namespace codemix
