#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "codemix/corpus.hpp"

namespace codemix {

struct TaskSize {
  std::string task_id;
  std::size_t examples = 0;
};

/// Examples-proportional mixture with an artificial size cap.
struct MixtureSpec {
  std::vector<TaskSize> tasks;
  std::size_t limit = std::size_t{1} << 17;
  /// 1.0 gives plain examples-proportional mixing; other values rescale
  /// capped sizes by 1/temperature in the exponent before normalizing.
  double temperature = 1.0;

  void validate() const;
};

/// r_m = min(e_m, K) / sum_n min(e_n, K)  (temperature 1).
std::vector<double> mixing_rates(const MixtureSpec& spec);

/// i.i.d. categorical draws over task indices.
std::vector<std::size_t> sample_from_rates(std::span<const double> rates, std::size_t n_draws, std::uint64_t seed);

/// One task index per batch, drawn from mixing_rates(spec).
std::vector<std::size_t> sample_batch_assignments(const MixtureSpec& spec, std::size_t n_batches,
                                                  std::uint64_t seed);

struct ExampleRef {
  std::size_t source = 0;
  std::size_t index = 0;

  friend bool operator==(const ExampleRef&, const ExampleRef&) = default;
};

struct Batch {
  /// Task index for multi-task plans; 0 otherwise.
  std::size_t task = 0;
  std::vector<ExampleRef> items;

  std::size_t count_from(std::size_t source) const;

  friend bool operator==(const Batch&, const Batch&) = default;
};

/// Ordered batches over one or more example sources. Sources are named so
/// the plan can be audited without the datasets at hand.
struct BatchPlan {
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> sources;
  std::vector<std::string> tasks;
  std::vector<Batch> batches;

  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

/// Walks a shuffled permutation of [0, size) and reshuffles on each wrap.
class ExampleStream {
 public:
  ExampleStream(std::size_t size, std::uint64_t seed);

  std::size_t next();
  std::size_t passes_completed() const noexcept { return passes_; }
  std::size_t size() const noexcept { return order_.size(); }

 private:
  void reshuffle();

  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t passes_ = 0;
};

/// Single-dataset plan: one shuffled pass, final batch may be short.
BatchPlan build_monolingual_plan(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed);

/// Two-stream bilingual plan: each batch takes ceil(B/2) English and
/// floor(B/2) X examples. The dataset needing more batches is walked
/// exactly once; the other cycles. When the driving dataset does not fill
/// the last batch, that batch shrinks while keeping en - x in {0, 1}.
BatchPlan build_interspersed_batches(const Dataset& en, const Dataset& x, std::size_t batch_size,
                                     std::uint64_t seed);

/// All batches of `first` then all batches of `second`, each shuffled.
BatchPlan sequential_schedule(const Dataset& first, const Dataset& second, std::size_t batch_size,
                              std::uint64_t seed);

/// Task-homogeneous batches; each task cycles through its own shuffled
/// stream of spec.tasks[m].examples items.
BatchPlan build_multitask_plan(const MixtureSpec& spec, std::size_t batch_size, std::size_t n_batches,
                               std::uint64_t seed);

std::string format_plan_line(const BatchPlan& plan, std::size_t batch, std::string_view config_digest = {});
void write_plan_jsonl(const std::filesystem::path& path, const BatchPlan& plan, std::string_view config_digest = {});

}  // namespace codemix
