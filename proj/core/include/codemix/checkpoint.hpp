#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "codemix/model.hpp"
#include "codemix/optimizer.hpp"
#include "codemix/tokenizer.hpp"

namespace codemix {

/// Self-describing JSON container. Doubles are written in shortest
/// round-trip form, so save followed by load reproduces every value
/// bit for bit.
struct Checkpoint {
  ModelConfig config;
  std::size_t step = 0;
  Parameters params;
  std::optional<AdamState> optimizer;
  std::optional<Vocabulary> vocabulary;
  std::map<std::string, std::string> metadata;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_to_string(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_string(const std::string& text);

}  // namespace codemix
