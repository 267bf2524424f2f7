#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "codemix/masking.hpp"
#include "codemix/model.hpp"
#include "codemix/optimizer.hpp"
#include "codemix/trainer.hpp"

namespace codemix {

/// Invalid experiment configuration. `field` is the dotted path of the
/// offending entry ("stages[1].kind"), empty for whole-document problems.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message);
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetRef {
  /// Path exactly as written in the config.
  std::string source;
  /// Resolved against the config file's directory.
  std::filesystem::path path;
  TaskKind task = TaskKind::Mlm;
  Split split = Split::Train;
};

struct TaskRef {
  std::string train;
  std::optional<std::string> partner;
  ScheduleKind schedule = ScheduleKind::Monolingual;
  std::optional<std::string> dev;
};

struct StageConfig {
  std::string name;
  StageKind kind = StageKind::SingleTask;
  std::vector<TaskRef> tasks;
  std::size_t epochs = 1;
  std::size_t batch_size = 8;
  StoppingRule stopping = FixedEpochs{1};
  std::optional<std::string> eval;
  std::string metric;
};

struct ExperimentConfig {
  ModelConfig model{};
  OptimizerConfig optimizer{};
  double warmup_ratio = 0.1;
  std::size_t vocab_size = 512;
  /// Prebuilt vocabulary; when absent one is trained on every train split.
  std::optional<DatasetRef> vocab_file;
  MaskingPolicy masking{};
  std::size_t mixture_limit = std::size_t{1} << 17;
  double mixture_temperature = 1.0;
  std::map<std::string, DatasetRef> datasets;
  std::vector<StageConfig> stages;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output_dir = "output";
  std::size_t workers = 1;

  /// Canonical JSON of every field that influences results. Output
  /// location and worker count are excluded.
  std::string canonical_json() const;
  std::string digest() const;
};

/// Parses and validates a config document. Relative paths resolve
/// against `base_dir`. Unknown keys are rejected.
ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Reads every dataset referenced by the config.
std::map<std::string, Dataset> load_config_datasets(const ExperimentConfig& config);

/// Trains (or loads) the vocabulary for an experiment.
Vocabulary build_experiment_vocabulary(const ExperimentConfig& config, const std::map<std::string, Dataset>& data);

std::vector<StageSpec> build_stages(const ExperimentConfig& config, const std::map<std::string, Dataset>& data);

struct ExperimentOutputs {
  RunReport report;
  std::filesystem::path report_path;
};

/// Runs the whole pipeline and writes report.json, train_log.jsonl,
/// vocab.txt, plan.jsonl, masked.jsonl (when an MLM stage exists) and
/// checkpoints/ under config.output_dir.
ExperimentOutputs run_experiment(const ExperimentConfig& config);

}  // namespace codemix
