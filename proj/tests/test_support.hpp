#pragma once

#include <cstdint>

#include "codemix/masking.hpp"
#include "codemix/model.hpp"
#include "codemix/random.hpp"

namespace codemix::testing {

// Pair encodings with random content lengths; segment 1 starts halfway
// through the content so span targets have room on both sides.
inline ModelBatch random_batch(const ModelConfig& c, std::size_t batch, std::uint64_t seed) {
  Rng rng(seed);
  ModelBatch b;
  for (std::size_t i = 0; i < batch; ++i) {
    Encoding e;
    const std::size_t content = 4 + rng.below(c.max_len - 4 - 1);
    const std::size_t split = content / 2;
    std::size_t word = 0;
    for (std::size_t t = 0; t < c.max_len; ++t) {
      TokenId id = kPadId;
      std::optional<std::size_t> w;
      std::uint8_t seg = t > split ? 1 : 0;
      if (t == 0) {
        id = kClsId;
        seg = 0;
      } else if (t == split || t == content) {
        id = kSepId;
        if (t == split) word = 0;
      } else if (t < content) {
        id = static_cast<TokenId>(kNumSpecials + rng.below(c.vocab_size - kNumSpecials));
        w = word++;
      } else {
        seg = 0;
      }
      e.token_ids.push_back(id);
      e.word_index.push_back(w);
      e.segment_ids.push_back(seg);
      e.attention_mask.push_back(id == kPadId ? 0 : 1);
    }
    std::vector<TokenId> labels(c.max_len, kIgnoreLabel);
    for (std::size_t t = 1; t < content; ++t) {
      if (t != split && rng.uniform() < 0.4) labels[t] = static_cast<TokenId>(kNumSpecials + rng.below(c.vocab_size - kNumSpecials));
    }
    labels[1] = e.token_ids[1];
    b.mlm_labels.push_back(labels);
    b.class_labels.push_back(rng.below(c.num_labels));
    const std::size_t start = split + 1 + rng.below(content - split - 1);
    const std::size_t end = start + rng.below(content - start);
    b.start_positions.push_back(start);
    b.end_positions.push_back(end);
    b.inputs.push_back(std::move(e));
  }
  return b;
}

inline ModelConfig gradient_config() {
  ModelConfig c;
  c.layers = 2;
  c.heads = 4;
  c.d_model = 32;
  c.d_ff = 64;
  c.vocab_size = 200;
  c.max_len = 12;
  c.num_labels = 3;
  c.seed = 17;
  c.init_std = 0.3;
  return c;
}

}  // namespace codemix::testing
