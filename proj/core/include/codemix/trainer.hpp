#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "codemix/corpus.hpp"
#include "codemix/masking.hpp"
#include "codemix/metrics.hpp"
#include "codemix/mixer.hpp"
#include "codemix/model.hpp"
#include "codemix/optimizer.hpp"
#include "codemix/tokenizer.hpp"

namespace codemix {

/// Raised when a stage list cannot form a valid pipeline.
class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- stopping rules ----

/// Never stops early; the epoch with the best dev metric is kept.
struct DevMetricBest {
  std::string metric;
};
/// Stops once train accuracy lies in [lo, hi].
struct TrainAccuracyRange {
  double lo = 0.70;
  double hi = 0.80;
};
/// Stops once train loss is at or below the threshold.
struct TrainLossBelow {
  double threshold = 0.1;
};
struct FixedEpochs {
  std::size_t epochs = 1;
};

using StoppingRule = std::variant<DevMetricBest, TrainAccuracyRange, TrainLossBelow, FixedEpochs>;

void validate_stopping_rule(const StoppingRule& rule);
std::string describe(const StoppingRule& rule);

struct TrainingSnapshot {
  std::optional<double> train_acc;
  std::optional<double> train_loss;
  std::optional<double> dev_metric;
  std::optional<std::size_t> epoch;
};

/// Throws std::invalid_argument when the rule needs a snapshot field that
/// is absent.
bool should_stop(const StoppingRule& rule, const TrainingSnapshot& snapshot);

struct MetricPoint {
  std::size_t epoch = 0;
  double value = 0.0;
};

/// Epoch with the highest metric; ties go to the earliest epoch, so the
/// answer does not depend on evaluation order.
std::size_t select_best_checkpoint(std::span<const MetricPoint> trace);

// ---- stages ----

enum class StageKind { MlmPretrain, SingleTask, MultiTask, FineTune };
enum class ScheduleKind { Monolingual, Interspersed, Sequential };

std::string_view to_string(StageKind kind) noexcept;
std::string_view to_string(ScheduleKind kind) noexcept;
StageKind parse_stage_kind(std::string_view name);
ScheduleKind parse_schedule_kind(std::string_view name);

/// One task's data inside a stage. A partner dataset turns the source
/// bilingual: interspersed or sequential for single-task stages, merged
/// for multi-task stages.
struct TaskSource {
  Dataset train;
  std::optional<Dataset> partner;
  ScheduleKind schedule = ScheduleKind::Monolingual;
  std::optional<Dataset> dev;
};

struct StageSpec {
  std::string name;
  StageKind kind = StageKind::SingleTask;
  std::vector<TaskSource> tasks;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  StoppingRule stopping = FixedEpochs{1};
  MaskingPolicy masking{};
  /// Multi-task mixing cap and temperature; task sizes come from the data.
  std::size_t mixture_limit = std::size_t{1} << 17;
  double mixture_temperature = 1.0;
  /// FineTune: held-out set scored once per seed after training.
  std::optional<Dataset> eval;
  /// Empty selects the task default (NLI accuracy, SA weighted F1, QA token F1).
  std::string metric;
};

Head head_for(TaskKind task) noexcept;
std::string default_metric(TaskKind task);

/// Throws PipelineError on: no stages, a FineTune stage that is missing or
/// not last, multi-task stages with fewer than two distinct heads, task
/// kinds that disagree with the stage kind, or partners of another task.
void validate_pipeline(std::span<const StageSpec> stages);

// ---- prepared examples ----

struct PreparedExample {
  Encoding input;
  std::vector<TokenId> mlm_labels;
  std::size_t class_label = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  /// QA: context words and gold answer, for token-F1 scoring.
  std::vector<std::string> context_words;
  std::string answer;
};

struct PreparedData {
  TaskKind task = TaskKind::Mlm;
  std::vector<PreparedExample> examples;
  /// Monolingual sentences dropped by switch-boundary masking.
  std::size_t skipped = 0;
  /// Examples dropped because masking selected nothing or truncation cut
  /// the answer.
  std::size_t dropped = 0;
};

PreparedData prepare_examples(const Dataset& dataset, const Vocabulary& vocab, std::size_t max_len,
                              const MaskingPolicy& masking, std::uint64_t seed);

ModelBatch make_model_batch(TaskKind task, std::span<const PreparedExample* const> items);

/// Scores a prepared set with the named metric: accuracy, weighted_f1,
/// token_f1, or mlm_accuracy.
double evaluate_prepared(const ModelConfig& config, const Parameters& params, const PreparedData& data,
                         std::string_view metric, std::size_t batch_size = 32);

// ---- pipeline ----

struct PipelineOptions {
  ModelConfig model{};
  OptimizerConfig optimizer{};
  /// Fraction of each stage's optimizer steps used for linear warmup.
  double warmup_ratio = 0.1;
  Vocabulary vocab{};
  /// Seeds run on up to this many threads; results do not depend on it.
  std::size_t workers = 1;
  /// Embedded in the report; computed from the stages when empty.
  std::string config_digest;
  /// When set, the final parameters of every seed are saved here.
  std::optional<std::filesystem::path> checkpoint_dir;
};

struct LogRecord {
  std::uint64_t seed = 0;
  std::string stage;
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double metric = 0.0;
  std::string metric_name;
};

struct StageLog {
  std::string stage;
  std::string kind;
  std::size_t epochs_run = 0;
  std::size_t optimizer_steps = 0;
  std::size_t micro_batches = 0;
  std::map<std::string, std::size_t> head_updates;
  std::map<std::string, std::size_t> heads_reset;
  std::size_t skipped_sentences = 0;
  std::size_t dropped_examples = 0;
  double final_train_loss = 0.0;
  std::optional<double> final_train_accuracy;
  bool stopped_early = false;
  /// Per task (dataset id): best dev epoch and value under DevMetricBest.
  std::map<std::string, MetricPoint> best_dev;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double metric = 0.0;
  std::vector<StageLog> stages;
  std::vector<LogRecord> log;
  std::size_t skipped_sentences = 0;
  /// First-epoch batch plan of every stage.
  std::vector<BatchPlan> plans;
};

struct RunReport {
  std::string metric;
  std::vector<SeedResult> per_seed;
  double mean = 0.0;
  double max = 0.0;
  double min = 0.0;
  double std = 0.0;
  std::string config_digest;
  std::size_t skipped_sentences = 0;

  std::string to_json() const;
  /// Line-oriented training log, one JSON record per line.
  std::string log_jsonl() const;
};

std::string pipeline_digest(std::span<const StageSpec> stages, const PipelineOptions& options,
                            std::span<const std::uint64_t> seeds);

/// Runs every stage in order for each seed and aggregates the final
/// stage's score across seeds.
RunReport run_pipeline(std::span<const StageSpec> stages, std::span<const std::uint64_t> seeds,
                       const PipelineOptions& options);

/// One seed, returning the trained parameters as well.
SeedResult run_seed(std::span<const StageSpec> stages, std::uint64_t seed, const PipelineOptions& options,
                    Parameters* final_params = nullptr, ModelConfig* final_config = nullptr);

}  // namespace codemix
