#include "codemix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "codemix/text.hpp"

namespace codemix {

namespace {

void check_pair(std::size_t a, std::size_t b) {
  if (a != b) throw std::invalid_argument("predictions and gold differ in length");
  if (a == 0) throw std::invalid_argument("cannot score an empty prediction list");
}

}  // namespace

double evaluate_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> gold) {
  check_pair(predictions.size(), gold.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predictions[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

F1Score evaluate_token_f1(std::string_view predicted, std::string_view gold) {
  const auto pred = split_words(predicted);
  const auto ref = split_words(gold);
  if (pred.empty() || ref.empty()) return {};
  std::map<std::string, std::size_t> remaining;
  for (const auto& t : ref) ++remaining[t];
  std::size_t common = 0;
  for (const auto& t : pred) {
    auto it = remaining.find(t);
    if (it != remaining.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return {};
  F1Score s;
  s.precision = static_cast<double>(common) / static_cast<double>(pred.size());
  s.recall = static_cast<double>(common) / static_cast<double>(ref.size());
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

double mean_token_f1(std::span<const std::string_view> predicted, std::span<const std::string_view> gold) {
  check_pair(predicted.size(), gold.size());
  double total = 0.0;
  for (std::size_t i = 0; i < gold.size(); ++i) total += evaluate_token_f1(predicted[i], gold[i]).f1;
  return total / static_cast<double>(gold.size());
}

F1Score evaluate_weighted_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                             std::span<const std::size_t> label_set) {
  check_pair(predictions.size(), gold.size());
  const double n = static_cast<double>(gold.size());
  F1Score out;
  for (std::size_t label : label_set) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      const bool p = predictions[i] == label;
      const bool g = gold[i] == label;
      tp += p && g ? 1 : 0;
      fp += p && !g ? 1 : 0;
      fn += !p && g ? 1 : 0;
    }
    const std::size_t support = tp + fn;
    if (support == 0) continue;
    const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(support);
    const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    const double weight = static_cast<double>(support) / n;
    out.precision += weight * precision;
    out.recall += weight * recall;
    out.f1 += weight * f1;
  }
  return out;
}

SeedSummary summarize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("cannot summarize an empty list");
  SeedSummary s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  s.max = *std::max_element(values.begin(), values.end());
  s.min = *std::min_element(values.begin(), values.end());
  // summation rounding can push the mean a hair outside [min, max]
  s.mean = std::clamp(s.mean, s.min, s.max);
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

}  // namespace codemix
