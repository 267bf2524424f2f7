#include <set>

#include <gtest/gtest.h>

#include "codemix/synthetic.hpp"
#include "codemix/trainer.hpp"

using namespace codemix;

namespace {

struct World {
  SyntheticLexicon lex = make_synthetic_lexicon(20, 2, 3);
  Dataset mlm;
  Dataset sa_en;
  Dataset sa_x;
  Dataset sa_cs;
  Dataset sa_dev;
  PipelineOptions options;

  World() {
    mlm = make_mlm_dataset("cs", Split::Train, synthetic_sentences(lex, SyntheticMix::CodeSwitched, 40, 3, 6, 1));
    sa_en = make_classification_dataset("en", TaskKind::Sa, Split::Train,
                                        synthetic_sentiment(lex, SyntheticMix::English, 30, 3, 6, 2));
    sa_x = make_classification_dataset("x", TaskKind::Sa, Split::Train,
                                       synthetic_sentiment(lex, SyntheticMix::Other, 20, 3, 6, 3));
    sa_cs = make_classification_dataset("cs-sa", TaskKind::Sa, Split::Train,
                                        synthetic_sentiment(lex, SyntheticMix::CodeSwitched, 30, 3, 6, 4));
    sa_dev = make_classification_dataset("cs-dev", TaskKind::Sa, Split::Dev,
                                         synthetic_sentiment(lex, SyntheticMix::CodeSwitched, 20, 3, 6, 5));
    std::vector<std::string> words = lex.en_words;
    words.insert(words.end(), lex.x_words.begin(), lex.x_words.end());
    options.vocab = train_vocabulary_from_words(words, 80);
    options.model.layers = 1;
    options.model.heads = 2;
    options.model.d_model = 8;
    options.model.d_ff = 16;
    options.model.max_len = 10;
    options.model.init_std = 0.1;
    options.optimizer.learning_rate = 3e-3;
    options.optimizer.grad_accum_steps = 2;
  }

  StageSpec mlm_stage() const {
    StageSpec s;
    s.name = "mlm";
    s.kind = StageKind::MlmPretrain;
    s.tasks = {TaskSource{mlm, std::nullopt, ScheduleKind::Monolingual, std::nullopt}};
    s.batch_size = 8;
    s.masking.kind = MaskingKind::SwitchBoundary;
    return s;
  }

  StageSpec bilingual_stage(ScheduleKind schedule) const {
    StageSpec s;
    s.name = "bilingual";
    s.kind = StageKind::SingleTask;
    s.tasks = {TaskSource{sa_en, sa_x, schedule, std::nullopt}};
    s.batch_size = 6;
    s.epochs = 2;
    s.stopping = FixedEpochs{2};
    return s;
  }

  StageSpec fine_tune_stage() const {
    StageSpec s;
    s.name = "target";
    s.kind = StageKind::FineTune;
    s.tasks = {TaskSource{sa_cs, std::nullopt, ScheduleKind::Monolingual, sa_dev}};
    s.batch_size = 8;
    s.epochs = 2;
    s.stopping = DevMetricBest{"weighted_f1"};
    return s;
  }

  std::vector<StageSpec> pipeline() const {
    return {mlm_stage(), bilingual_stage(ScheduleKind::Interspersed), fine_tune_stage()};
  }
};

}  // namespace

TEST(StoppingRules, Decisions) {
  EXPECT_TRUE(should_stop(TrainAccuracyRange{0.7, 0.8}, {0.75, std::nullopt, std::nullopt, std::nullopt}));
  EXPECT_FALSE(should_stop(TrainAccuracyRange{0.7, 0.8}, {0.85, std::nullopt, std::nullopt, std::nullopt}));
  EXPECT_TRUE(should_stop(TrainLossBelow{0.1}, {std::nullopt, 0.1, std::nullopt, std::nullopt}));
  EXPECT_FALSE(should_stop(TrainLossBelow{0.1}, {std::nullopt, 0.2, std::nullopt, std::nullopt}));
  EXPECT_TRUE(should_stop(FixedEpochs{3}, {std::nullopt, std::nullopt, std::nullopt, 3}));
  EXPECT_FALSE(should_stop(DevMetricBest{"accuracy"}, {std::nullopt, std::nullopt, 0.99, 1}));
  EXPECT_THROW(should_stop(TrainLossBelow{0.1}, {0.5, std::nullopt, std::nullopt, std::nullopt}),
               std::invalid_argument);
  EXPECT_THROW(validate_stopping_rule(TrainAccuracyRange{0.9, 0.1}), std::invalid_argument);
}

TEST(StoppingRules, BestCheckpointTiesGoEarliest) {
  const std::vector<MetricPoint> trace{{3, 0.8}, {1, 0.8}, {2, 0.5}};
  EXPECT_EQ(select_best_checkpoint(trace), 1u);
  EXPECT_THROW(select_best_checkpoint(std::vector<MetricPoint>{}), std::invalid_argument);
}

TEST(Names, RoundTrip) {
  for (auto k : {StageKind::MlmPretrain, StageKind::SingleTask, StageKind::MultiTask, StageKind::FineTune}) {
    EXPECT_EQ(parse_stage_kind(to_string(k)), k);
  }
  EXPECT_EQ(parse_schedule_kind("sequential"), ScheduleKind::Sequential);
  EXPECT_THROW(parse_stage_kind("pretrain"), std::invalid_argument);
  EXPECT_EQ(default_metric(TaskKind::Sa), "weighted_f1");
  EXPECT_EQ(head_for(TaskKind::Qa), Head::Span);
}

TEST(Pipeline, ValidationRejectsBadShapes) {
  const World w;
  auto stages = w.pipeline();
  EXPECT_NO_THROW(validate_pipeline(stages));
  EXPECT_THROW(validate_pipeline(std::vector<StageSpec>{}), PipelineError);
  // fine-tune not last
  std::vector<StageSpec> swapped{w.fine_tune_stage(), w.mlm_stage()};
  EXPECT_THROW(validate_pipeline(swapped), PipelineError);
  // multi-task stage with a single head
  auto multi = w.bilingual_stage(ScheduleKind::Interspersed);
  multi.kind = StageKind::MultiTask;
  multi.tasks.push_back(TaskSource{w.sa_cs, std::nullopt, ScheduleKind::Monolingual, std::nullopt});
  std::vector<StageSpec> bad{multi, w.fine_tune_stage()};
  EXPECT_THROW(validate_pipeline(bad), PipelineError);
  // mlm data in a fine-tune stage
  auto ft = w.fine_tune_stage();
  ft.tasks[0].train = w.mlm;
  ft.tasks[0].dev.reset();
  EXPECT_THROW(validate_pipeline(std::vector<StageSpec>{ft}), PipelineError);
  // partner of another task
  auto mixed = w.bilingual_stage(ScheduleKind::Interspersed);
  mixed.tasks[0].partner = w.mlm;
  EXPECT_THROW(validate_pipeline(std::vector<StageSpec>{mixed, w.fine_tune_stage()}), PipelineError);
}

TEST(Prepare, SwitchBoundarySkipsMonolingual) {
  const World w;
  auto sentences = synthetic_sentences(w.lex, SyntheticMix::English, 5, 3, 5, 9);
  const auto cs = synthetic_sentences(w.lex, SyntheticMix::CodeSwitched, 5, 3, 5, 9);
  sentences.insert(sentences.end(), cs.begin(), cs.end());
  MaskingPolicy p;
  p.kind = MaskingKind::SwitchBoundary;
  const auto data = prepare_examples(make_mlm_dataset("m", Split::Train, sentences), w.options.vocab, 10, p, 1);
  EXPECT_EQ(data.skipped, 5u);
  EXPECT_EQ(data.examples.size() + data.dropped, 5u);
}

TEST(Prepare, QaTargetsCoverAnswerWords) {
  const World w;
  const auto& words = w.lex.en_words;
  const std::string context = words[0] + " " + words[1] + " " + words[2] + " " + words[3];
  const std::string answer = words[1] + " " + words[2];
  QaExample ex{context, words[4], answer, words[0].size() + 1, LanguageTag("en")};
  const auto data = prepare_examples(make_qa_dataset("qa", Split::Train, {ex}), w.options.vocab, 24, {}, 0);
  ASSERT_EQ(data.examples.size(), 1u);
  const auto& p = data.examples[0];
  EXPECT_EQ(p.input.segment_ids[p.start], 1);
  EXPECT_EQ(*p.input.word_index[p.start], 1u);
  EXPECT_EQ(*p.input.word_index[p.end], 2u);
  EXPECT_TRUE(p.end + 1 >= p.input.size() || p.input.word_index[p.end + 1] != std::optional<std::size_t>(2));
  EXPECT_EQ(p.answer, answer);
}

TEST(Run, DeterministicAcrossRunsAndWorkers) {
  const World w;
  const auto stages = w.pipeline();
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  auto options = w.options;
  const auto a = run_pipeline(stages, seeds, options);
  options.workers = 3;
  const auto b = run_pipeline(stages, seeds, options);
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.log_jsonl(), b.log_jsonl());
  ASSERT_EQ(a.per_seed.size(), 3u);
  EXPECT_EQ(a.metric, "weighted_f1");
  EXPECT_LE(a.min, a.mean);
  EXPECT_LE(a.mean, a.max);
  EXPECT_FALSE(a.config_digest.empty());
}

TEST(Run, StageBookkeeping) {
  const World w;
  const auto stages = w.pipeline();
  Parameters params;
  ModelConfig config;
  const auto r = run_seed(stages, 4, w.options, &params, &config);
  ASSERT_EQ(r.stages.size(), 3u);
  const auto& mlm = r.stages[0];
  EXPECT_EQ(mlm.head_updates.at("mlm"), mlm.micro_batches);
  EXPECT_EQ(mlm.optimizer_steps, (mlm.micro_batches + 1) / 2);
  const auto& bi = r.stages[1];
  EXPECT_EQ(bi.epochs_run, 2u);
  EXPECT_FALSE(bi.head_updates.contains("mlm"));
  EXPECT_EQ(r.stages[2].best_dev.count("cs-sa"), 1u);
  EXPECT_EQ(config.num_labels, 3u);
  EXPECT_TRUE(params.all_finite());
  ASSERT_EQ(r.plans.size(), 3u);
  // interspersed first-epoch plan keeps every batch balanced
  for (const auto& b : r.plans[1].batches) {
    const auto e = b.count_from(0);
    const auto x = b.count_from(1);
    EXPECT_TRUE(e == x || e == x + 1);
  }
}

TEST(Run, SequentialNeverInterleaves) {
  const World w;
  const std::vector<StageSpec> stages{w.bilingual_stage(ScheduleKind::Sequential), w.fine_tune_stage()};
  const auto r = run_seed(stages, 1, w.options);
  bool second = false;
  for (const auto& b : r.plans[0].batches) {
    const auto e = b.count_from(0);
    const auto x = b.count_from(1);
    EXPECT_TRUE(e == 0 || x == 0);
    if (x > 0) second = true;
    if (second) EXPECT_EQ(e, 0u);
  }
}

TEST(Run, TrainLossRuleStopsEarly) {
  const World w;
  auto bi = w.bilingual_stage(ScheduleKind::Interspersed);
  bi.epochs = 5;
  bi.stopping = TrainLossBelow{100.0};
  const auto r = run_seed(std::vector<StageSpec>{bi, w.fine_tune_stage()}, 1, w.options);
  EXPECT_TRUE(r.stages[0].stopped_early);
  EXPECT_EQ(r.stages[0].epochs_run, 1u);
}

TEST(Run, HeadsUnusedInAStageAreUntouched) {
  const World w;
  Parameters before;
  ModelConfig config;
  run_seed(std::vector<StageSpec>{w.mlm_stage(), w.fine_tune_stage()}, 2, w.options, &before, &config);
  auto options = w.options;
  options.optimizer.weight_decay = 0.5;
  Parameters after;
  run_seed(std::vector<StageSpec>{w.mlm_stage(), w.fine_tune_stage()}, 2, options, &after, &config);
  // decay reaches only the heads and body the stages train; the span head is never trained
  for (const auto& name : head_tensor_names(config, Head::Span)) EXPECT_EQ(before.at(name), after.at(name));
}
