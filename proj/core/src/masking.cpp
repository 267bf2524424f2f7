#include "codemix/masking.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "codemix/random.hpp"

namespace codemix {

std::string_view to_string(MaskingKind kind) noexcept {
  return kind == MaskingKind::Standard ? "standard" : "switch-boundary";
}

MaskingKind parse_masking_kind(std::string_view name) {
  if (name == "standard") return MaskingKind::Standard;
  if (name == "switch-boundary" || name == "switch_boundary") return MaskingKind::SwitchBoundary;
  throw std::invalid_argument("unknown masking policy '" + std::string(name) + "'");
}

void MaskingPolicy::validate() const {
  if (!(select_rate > 0.0 && select_rate <= 1.0)) throw std::invalid_argument("select_rate must be in (0, 1]");
  for (double p : {corruption.mask, corruption.random, corruption.keep}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("corruption probabilities must be in [0, 1]");
  }
  if (std::abs(corruption.mask + corruption.random + corruption.keep - 1.0) > 1e-9) {
    throw std::invalid_argument("corruption probabilities must sum to 1");
  }
}

std::vector<std::size_t> boundary_word_indices(const TaggedSentence& sentence) {
  std::vector<std::size_t> out;
  const auto& w = sentence.words;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const bool left = i > 0 && w[i - 1].tag != w[i].tag;
    const bool right = i + 1 < w.size() && w[i + 1].tag != w[i].tag;
    if (left || right) out.push_back(i);
  }
  return out;
}

std::optional<MaskedLmExample> make_mlm_example(const Encoding& encoding, const TaggedSentence& sentence,
                                                const MaskingPolicy& policy, std::size_t vocab_size,
                                                std::uint64_t rng_seed) {
  policy.validate();
  if (vocab_size <= static_cast<std::size_t>(kNumSpecials)) {
    throw std::invalid_argument("vocabulary has no non-special tokens");
  }
  for (const auto& w : encoding.word_index) {
    if (w && *w >= sentence.size()) {
      throw std::invalid_argument("encoding refers to word " + std::to_string(*w) + " but the sentence has " +
                                  std::to_string(sentence.size()) + " words");
    }
  }

  std::vector<bool> eligible_word(sentence.size(), policy.kind == MaskingKind::Standard);
  if (policy.kind == MaskingKind::SwitchBoundary) {
    const auto boundary = boundary_word_indices(sentence);
    if (boundary.empty()) return std::nullopt;
    for (auto i : boundary) eligible_word[i] = true;
  }

  std::vector<std::size_t> candidates;
  for (std::size_t pos = 0; pos < encoding.size(); ++pos) {
    const auto& w = encoding.word_index[pos];
    if (!w || Vocabulary::is_special(encoding.token_ids[pos])) continue;
    if (eligible_word[*w]) candidates.push_back(pos);
  }

  Rng rng(rng_seed);
  std::vector<bool> chosen(encoding.size(), false);
  if (policy.whole_word) {
    std::vector<int> word_choice(sentence.size(), -1);
    for (auto pos : candidates) {
      auto& c = word_choice[*encoding.word_index[pos]];
      if (c < 0) c = rng.uniform() < policy.select_rate ? 1 : 0;
      chosen[pos] = c == 1;
    }
  } else {
    for (auto pos : candidates) chosen[pos] = rng.uniform() < policy.select_rate;
  }

  MaskedLmExample ex;
  ex.input_ids = encoding.token_ids;
  ex.labels.assign(encoding.size(), kIgnoreLabel);
  const auto non_special = static_cast<std::uint64_t>(vocab_size) - kNumSpecials;
  for (std::size_t pos = 0; pos < encoding.size(); ++pos) {
    if (!chosen[pos]) continue;
    ex.selected.push_back(pos);
    ex.labels[pos] = encoding.token_ids[pos];
    const double u = rng.uniform();
    if (u < policy.corruption.mask) {
      ex.input_ids[pos] = kMaskId;
    } else if (u < policy.corruption.mask + policy.corruption.random) {
      ex.input_ids[pos] = static_cast<TokenId>(kNumSpecials + rng.below(non_special));
    }
  }
  return ex;
}

MaskedCorpus mask_corpus(std::span<const TaggedSentence> corpus, const Vocabulary& vocab, std::size_t max_len,
                         const MaskingPolicy& policy, std::uint64_t base_seed) {
  MaskedCorpus out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto enc = encode(corpus[i], vocab, max_len);
    auto ex = make_mlm_example(enc, corpus[i], policy, vocab.size(), base_seed + i);
    if (!ex) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back(std::move(*ex));
    out.source_index.push_back(i);
    out.encodings.push_back(std::move(enc));
  }
  return out;
}

std::string format_masked_line(const MaskedLmExample& example, std::string_view config_digest) {
  nlohmann::json doc{{"input_ids", example.input_ids}, {"labels", example.labels}, {"selected", example.selected}};
  if (!config_digest.empty()) doc["config_digest"] = std::string(config_digest);
  return doc.dump();
}

void write_masked_jsonl(const std::filesystem::path& path, std::span<const MaskedLmExample> examples,
                        std::string_view config_digest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& ex : examples) out << format_masked_line(ex, config_digest) << '\n';
}

}  // namespace codemix
