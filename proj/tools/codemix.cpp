#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "codemix/checkpoint.hpp"
#include "codemix/corpus.hpp"
#include "codemix/experiment.hpp"
#include "codemix/masking.hpp"
#include "codemix/text.hpp"
#include "codemix/tokenizer.hpp"
#include "codemix/trainer.hpp"
#include "codemix/translit.hpp"

namespace fs = std::filesystem;
using namespace codemix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

// Errors the user can fix by changing arguments, config or input files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const fs::path& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": file not found: " + path.string());
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  for (auto& f : split_fields(csv, ',')) {
    const auto t = trim(f);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

std::unique_ptr<WordTransducer> transducer_from(const std::string& spec) {
  if (fs::is_regular_file(spec)) return std::make_unique<TableTransducer>(TableTransducer::load(spec));
  try {
    return make_transducer(spec);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--translit: ") + e.what());
  }
}

// ---- prepare-data ----

struct PrepareArgs {
  std::string input;
  std::string task;
  std::string output;
  std::string split = "train";
  std::string filter_labels;
  std::string merge;
  std::string translit;
  std::size_t split_premises = 0;
};

int prepare_data(const PrepareArgs& a) {
  require_file(a.input, "--input");
  const TaskKind task = parse_task_kind(a.task);
  const Split split = parse_split(a.split);
  Dataset data = load_dataset(a.input, fs::path(a.input).stem().string(), task, split);
  if (!a.merge.empty()) {
    require_file(a.merge, "--merge");
    data = merge_bilingual_dataset(data, load_dataset(a.merge, fs::path(a.merge).stem().string(), task, split));
  }
  const auto transducer = a.translit.empty() ? nullptr : transducer_from(a.translit);

  nlohmann::json summary{{"input", data.size()}};
  switch (task) {
    case TaskKind::Mlm: {
      auto sentences = data.sentences();
      if (transducer) {
        for (auto& s : sentences) {
          for (auto& w : s.words) w.surface = transducer->transduce(w.surface);
        }
      }
      write_tagged_jsonl(a.output, sentences);
      summary["output"] = sentences.size();
      break;
    }
    case TaskKind::Nli:
    case TaskKind::Sa: {
      auto examples = data.classification();
      if (a.split_premises > 0) {
        std::vector<ClassificationExample> split_out;
        for (const auto& ex : examples) {
          for (auto& seg : split_premise_dialogues(ex.text_a, a.split_premises)) {
            auto copy = ex;
            copy.text_a = std::move(seg);
            split_out.push_back(std::move(copy));
          }
        }
        examples = std::move(split_out);
      }
      if (!a.filter_labels.empty()) examples = filter_nli_examples(examples, split_list(a.filter_labels));
      if (transducer) {
        for (auto& ex : examples) ex = transliterate_classification_example(ex, *transducer);
      }
      write_classification_tsv(a.output, examples);
      summary["output"] = examples.size();
      break;
    }
    case TaskKind::Qa: {
      std::vector<QaExample> examples;
      std::size_t misaligned = 0;
      for (const auto& ex : data.qa()) {
        if (!transducer) {
          examples.push_back(ex);
          continue;
        }
        try {
          const auto fixed = transliterate_qa_example(ex, *transducer);
          if (fixed.verified) examples.push_back(fixed.to_example(ex.language));
          else ++misaligned;
        } catch (const SpanAlignmentError&) {
          ++misaligned;
        }
      }
      write_qa_jsonl(a.output, examples);
      summary["output"] = examples.size();
      summary["misaligned"] = misaligned;
      break;
    }
  }
  std::cout << summary.dump() << '\n';
  return kExitOk;
}

// ---- mask-dump ----

struct MaskArgs {
  std::string input;
  std::string output = "masked.jsonl";
  std::string policy = "standard";
  std::string vocab;
  std::size_t vocab_size = 512;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  std::optional<double> select_rate;
  bool whole_word = false;
};

int mask_dump(const MaskArgs& a) {
  require_file(a.input, "--input");
  const auto corpus = read_tagged_jsonl(a.input);
  MaskingPolicy policy;
  policy.kind = parse_masking_kind(a.policy);
  if (a.select_rate) policy.select_rate = *a.select_rate;
  policy.whole_word = a.whole_word;
  policy.validate();

  Vocabulary vocab;
  if (!a.vocab.empty()) {
    require_file(a.vocab, "--vocab");
    vocab = Vocabulary::load(a.vocab);
  } else {
    vocab = train_vocabulary(corpus, a.vocab_size);
  }
  const nlohmann::json settings{{"input", fs::path(a.input).filename().string()},
                                {"policy", to_string(policy.kind)},
                                {"select_rate", policy.select_rate},
                                {"whole_word", policy.whole_word},
                                {"max_len", a.max_len},
                                {"seed", a.seed},
                                {"vocab", fnv1a_hex(join_words(vocab.tokens(), "\n"))}};
  const auto digest = fnv1a_hex(settings.dump());
  const auto masked = mask_corpus(corpus, vocab, a.max_len, policy, a.seed);
  write_masked_jsonl(a.output, masked.examples, digest);
  std::cout << nlohmann::json{{"produced", masked.examples.size()},
                              {"skipped", masked.skipped},
                              {"corpus", corpus.size()},
                              {"config_digest", digest}}
                   .dump()
            << '\n';
  return kExitOk;
}

// ---- train / run-experiment ----

struct ExperimentArgs {
  std::string config;
  std::string output_dir;
  std::string seeds;
  std::size_t workers = 0;
};

ExperimentConfig load_with_overrides(const ExperimentArgs& a) {
  require_file(a.config, "--config");
  auto cfg = load_experiment_config(a.config);
  if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
  if (!a.seeds.empty()) {
    cfg.seeds.clear();
    for (const auto& s : split_list(a.seeds)) {
      try {
        cfg.seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw UsageError("--seeds: not an integer: " + s);
      }
    }
    if (cfg.seeds.empty()) throw UsageError("--seeds: empty list");
  }
  if (a.workers > 0) cfg.workers = a.workers;
  return cfg;
}

int run_experiment_cmd(const ExperimentArgs& a) {
  const auto cfg = load_with_overrides(a);
  const auto out = run_experiment(cfg);
  std::cout << nlohmann::json{{"report", out.report_path.string()},
                              {"metric", out.report.metric},
                              {"mean", out.report.mean},
                              {"max", out.report.max},
                              {"std", out.report.std},
                              {"config_digest", out.report.config_digest}}
                   .dump()
            << '\n';
  return kExitOk;
}

// ---- evaluate ----

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string task;
  std::string split = "test";
  std::string metric;
};

int evaluate_cmd(const EvalArgs& a) {
  require_file(a.checkpoint, "--checkpoint");
  require_file(a.data, "--data");
  const auto ck = load_checkpoint(a.checkpoint);
  if (!ck.vocabulary) throw UsageError("--checkpoint: checkpoint carries no vocabulary");
  const TaskKind task = parse_task_kind(a.task);
  const auto data = load_dataset(a.data, fs::path(a.data).stem().string(), task, parse_split(a.split));
  const auto metric = a.metric.empty() ? default_metric(task) : a.metric;
  ModelConfig config = ck.config;
  if (head_for(task) == Head::Classify && config.num_labels != task_labels(task).size()) {
    throw UsageError("--task: checkpoint classifies " + std::to_string(config.num_labels) + " labels, " +
                     std::string(to_string(task)) + " has " + std::to_string(task_labels(task).size()));
  }
  const auto prepared = prepare_examples(data, *ck.vocabulary, config.max_len, MaskingPolicy{}, config.seed);
  const double value = evaluate_prepared(config, ck.params, prepared, metric);
  nlohmann::json out{{"metric", metric}, {"value", value}, {"examples", prepared.examples.size()}};
  if (const auto it = ck.metadata.find("config_digest"); it != ck.metadata.end()) out["config_digest"] = it->second;
  std::cout << out.dump() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Code-switched intermediate-task training toolkit"};
  app.require_subcommand(1);

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare-data", "Split, filter, merge or transliterate a dataset");
  prepare->add_option("--input", prep.input, "Dataset file")->required();
  prepare->add_option("--task", prep.task, "mlm, nli, sa or qa")->required();
  prepare->add_option("--output", prep.output, "Output file")->required();
  prepare->add_option("--split", prep.split, "train, dev or test")->capture_default_str();
  prepare->add_option("--filter-labels", prep.filter_labels, "Comma-separated labels to keep");
  prepare->add_option("--merge", prep.merge, "Second dataset of the same task to append");
  prepare->add_option("--translit", prep.translit,
                      "Transducer name (identity, uppercase, vowel-doubling) or two-column TSV table");
  prepare->add_option("--split-premises", prep.split_premises,
                       "Split text_a on ## and keep segments with at least this many words");

  MaskArgs mask;
  auto* mask_cmd = app.add_subcommand("mask-dump", "Write MLM-corrupted examples as JSONL");
  mask_cmd->add_option("--input", mask.input, "Tagged JSONL corpus")->required();
  mask_cmd->add_option("--output", mask.output, "Output JSONL")->capture_default_str();
  mask_cmd->add_option("--policy", mask.policy, "standard or switch-boundary")->capture_default_str();
  mask_cmd->add_option("--vocab", mask.vocab, "Vocabulary file (trained from the input when absent)");
  mask_cmd->add_option("--vocab-size", mask.vocab_size, "Target size when training a vocabulary")
      ->capture_default_str();
  mask_cmd->add_option("--max-len", mask.max_len, "Encoded length")->capture_default_str();
  mask_cmd->add_option("--seed", mask.seed, "Base seed; sentence i uses seed + i")->capture_default_str();
  mask_cmd->add_option("--select-rate", mask.select_rate, "Per-token selection probability");
  mask_cmd->add_flag("--whole-word", mask.whole_word, "Select whole words");

  ExperimentArgs exp;
  auto* run = app.add_subcommand("run-experiment", "Run every stage for every seed and write the report");
  ExperimentArgs train_args;
  std::uint64_t train_seed = 0;
  auto* train = app.add_subcommand("train", "Run the configured stages for a single seed");
  for (auto [cmd, args] : {std::pair{run, &exp}, std::pair{train, &train_args}}) {
    cmd->add_option("--config", args->config, "Experiment JSON")->required();
    cmd->add_option("--output-dir", args->output_dir, "Overrides output_dir");
    cmd->add_option("--workers", args->workers, "Overrides workers (seeds run in parallel)");
  }
  run->add_option("--seeds", exp.seeds, "Comma-separated seeds; overrides the config");
  train->add_option("--seed", train_seed, "Seed to train")->required();

  EvalArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  evaluate->add_option("--checkpoint", ev.checkpoint, "Checkpoint JSON")->required();
  evaluate->add_option("--data", ev.data, "Dataset file")->required();
  evaluate->add_option("--task", ev.task, "nli, sa, qa or mlm")->required();
  evaluate->add_option("--split", ev.split, "Split recorded for the dataset")->capture_default_str();
  evaluate->add_option("--metric", ev.metric, "accuracy, weighted_f1, token_f1 or mlm_accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*prepare) return prepare_data(prep);
    if (*mask_cmd) return mask_dump(mask);
    if (*run) return run_experiment_cmd(exp);
    if (*train) {
      train_args.seeds = std::to_string(train_seed);
      return run_experiment_cmd(train_args);
    }
    if (*evaluate) return evaluate_cmd(ev);
  } catch (const NumericalError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
