#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace codemix {

struct F1Score {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Fraction of positions where prediction equals gold. Throws
/// std::invalid_argument on empty or unequal inputs.
double evaluate_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold);

/// Whitespace-token overlap F1 with multiset intersection. All three
/// values are 0 when either side is empty or nothing overlaps.
F1Score evaluate_token_f1(std::string_view predicted, std::string_view gold);

/// Dataset-level QA score: mean of per-example token F1.
double mean_token_f1(std::span<const std::string_view> predicted, std::span<const std::string_view> gold);

/// Per-class scores averaged with weights equal to gold support / n.
F1Score evaluate_weighted_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                             std::span<const std::size_t> label_set);

struct SeedSummary {
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
  /// Population standard deviation.
  double std = 0.0;
};

SeedSummary summarize(std::span<const double> values);

}  // namespace codemix
