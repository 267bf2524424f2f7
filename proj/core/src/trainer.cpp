#include "codemix/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <set>
#include <thread>

#include <json.hpp>

#include "codemix/checkpoint.hpp"
#include "codemix/random.hpp"
#include "codemix/text.hpp"

namespace codemix {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

// ---- stopping rules ----

void validate_stopping_rule(const StoppingRule& rule) {
  std::visit(Overloaded{
                 [](const DevMetricBest&) {},
                 [](const TrainAccuracyRange& r) {
                   if (!(r.lo >= 0.0 && r.lo < r.hi && r.hi <= 1.0)) {
                     throw std::invalid_argument("train accuracy range needs 0 <= lo < hi <= 1");
                   }
                 },
                 [](const TrainLossBelow& r) {
                   if (!(r.threshold > 0.0)) throw std::invalid_argument("loss threshold must be positive");
                 },
                 [](const FixedEpochs& r) {
                   if (r.epochs == 0) throw std::invalid_argument("fixed epoch count must be positive");
                 },
             },
             rule);
}

std::string describe(const StoppingRule& rule) {
  return std::visit(
      Overloaded{
          [](const DevMetricBest& r) { return "dev_metric_best(" + r.metric + ")"; },
          [](const TrainAccuracyRange& r) {
            return "train_accuracy_range(" + nlohmann::json(r.lo).dump() + "," + nlohmann::json(r.hi).dump() + ")";
          },
          [](const TrainLossBelow& r) { return "train_loss_below(" + nlohmann::json(r.threshold).dump() + ")"; },
          [](const FixedEpochs& r) { return "fixed_epochs(" + std::to_string(r.epochs) + ")"; },
      },
      rule);
}

bool should_stop(const StoppingRule& rule, const TrainingSnapshot& s) {
  validate_stopping_rule(rule);
  return std::visit(Overloaded{
                        [&](const DevMetricBest&) {
                          if (!s.dev_metric) throw std::invalid_argument("snapshot lacks dev_metric");
                          return false;
                        },
                        [&](const TrainAccuracyRange& r) {
                          if (!s.train_acc) throw std::invalid_argument("snapshot lacks train_acc");
                          return *s.train_acc >= r.lo && *s.train_acc <= r.hi;
                        },
                        [&](const TrainLossBelow& r) {
                          if (!s.train_loss) throw std::invalid_argument("snapshot lacks train_loss");
                          return *s.train_loss <= r.threshold;
                        },
                        [&](const FixedEpochs& r) {
                          if (!s.epoch) throw std::invalid_argument("snapshot lacks epoch");
                          return *s.epoch >= r.epochs;
                        },
                    },
                    rule);
}

std::size_t select_best_checkpoint(std::span<const MetricPoint> trace) {
  if (trace.empty()) throw std::invalid_argument("empty metric trace");
  const MetricPoint* best = &trace[0];
  for (const auto& p : trace) {
    if (p.value > best->value || (p.value == best->value && p.epoch < best->epoch)) best = &p;
  }
  return best->epoch;
}

// ---- stages ----

std::string_view to_string(StageKind kind) noexcept {
  switch (kind) {
    case StageKind::MlmPretrain:
      return "mlm-pretrain";
    case StageKind::SingleTask:
      return "single-task";
    case StageKind::MultiTask:
      return "multi-task";
    case StageKind::FineTune:
      return "fine-tune";
  }
  return "unknown";
}

std::string_view to_string(ScheduleKind kind) noexcept {
  switch (kind) {
    case ScheduleKind::Monolingual:
      return "monolingual";
    case ScheduleKind::Interspersed:
      return "interspersed";
    case ScheduleKind::Sequential:
      return "sequential";
  }
  return "unknown";
}

StageKind parse_stage_kind(std::string_view name) {
  for (auto k : {StageKind::MlmPretrain, StageKind::SingleTask, StageKind::MultiTask, StageKind::FineTune}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown stage kind '" + std::string(name) + "'");
}

ScheduleKind parse_schedule_kind(std::string_view name) {
  for (auto k : {ScheduleKind::Monolingual, ScheduleKind::Interspersed, ScheduleKind::Sequential}) {
    if (name == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown schedule '" + std::string(name) + "'");
}

Head head_for(TaskKind task) noexcept {
  switch (task) {
    case TaskKind::Mlm:
      return Head::Mlm;
    case TaskKind::Qa:
      return Head::Span;
    default:
      return Head::Classify;
  }
}

std::string default_metric(TaskKind task) {
  switch (task) {
    case TaskKind::Mlm:
      return "mlm_accuracy";
    case TaskKind::Nli:
      return "accuracy";
    case TaskKind::Sa:
      return "weighted_f1";
    case TaskKind::Qa:
      return "token_f1";
  }
  return "accuracy";
}

namespace {

bool known_metric(std::string_view m) {
  return m == "accuracy" || m == "weighted_f1" || m == "token_f1" || m == "mlm_accuracy";
}

std::string stage_metric(const StageSpec& stage) {
  if (!stage.metric.empty()) return stage.metric;
  if (const auto* dev = std::get_if<DevMetricBest>(&stage.stopping); dev && !dev->metric.empty()) return dev->metric;
  return default_metric(stage.tasks.front().train.task);
}

std::string dev_metric_for(const StageSpec& stage, TaskKind task) {
  if (const auto* dev = std::get_if<DevMetricBest>(&stage.stopping); dev && !dev->metric.empty()) {
    // one metric name cannot score every head of a multi-task stage
    if (stage.tasks.size() == 1) return dev->metric;
  }
  return default_metric(task);
}

}  // namespace

void validate_pipeline(std::span<const StageSpec> stages) {
  if (stages.empty()) throw PipelineError("pipeline has no stages");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const std::string where = "stage '" + st.name + "': ";
    if (st.kind == StageKind::FineTune && i + 1 != stages.size()) {
      throw PipelineError(where + "fine-tune must be the last stage");
    }
    if (st.tasks.empty()) throw PipelineError(where + "no datasets");
    if (st.batch_size == 0) throw PipelineError(where + "batch_size must be positive");
    if (st.epochs == 0) throw PipelineError(where + "epochs must be positive");
    try {
      validate_stopping_rule(st.stopping);
      st.masking.validate();
    } catch (const std::invalid_argument& e) {
      throw PipelineError(where + e.what());
    }
    if (st.kind == StageKind::MultiTask) {
      std::set<Head> heads;
      for (const auto& t : st.tasks) {
        if (!heads.insert(head_for(t.train.task)).second) {
          throw PipelineError(where + "two tasks share the " + std::string(to_string(head_for(t.train.task))) +
                              " head");
        }
      }
      if (heads.size() < 2) throw PipelineError(where + "multi-task stages need at least two heads");
    } else if (st.tasks.size() != 1) {
      throw PipelineError(where + "exactly one dataset is required");
    }
    for (const auto& t : st.tasks) {
      const bool mlm = t.train.task == TaskKind::Mlm;
      if (st.kind == StageKind::MlmPretrain && !mlm) throw PipelineError(where + "MLM stages take MLM data only");
      if ((st.kind == StageKind::SingleTask || st.kind == StageKind::FineTune) && mlm) {
        throw PipelineError(where + "MLM data needs an mlm-pretrain or multi-task stage");
      }
      if (t.train.empty()) throw PipelineError(where + "dataset '" + t.train.id + "' is empty");
      if (t.partner && t.partner->task != t.train.task) {
        throw PipelineError(where + "partner '" + t.partner->id + "' has a different task");
      }
      if (t.dev && t.dev->task != t.train.task) {
        throw PipelineError(where + "dev set '" + t.dev->id + "' has a different task");
      }
      if (t.schedule != ScheduleKind::Monolingual && !t.partner) {
        throw PipelineError(where + std::string(to_string(t.schedule)) + " schedule needs a partner dataset");
      }
      if (t.schedule == ScheduleKind::Interspersed && st.kind != StageKind::MultiTask && st.batch_size < 2) {
        throw PipelineError(where + "interspersed batches need batch_size >= 2");
      }
    }
    if (std::holds_alternative<DevMetricBest>(st.stopping) &&
        std::none_of(st.tasks.begin(), st.tasks.end(), [](const TaskSource& t) { return t.dev.has_value(); })) {
      throw PipelineError(where + "dev_metric_best needs a dev set");
    }
    if (!st.metric.empty() && !known_metric(st.metric)) {
      throw PipelineError(where + "unknown metric '" + st.metric + "'");
    }
    if (const auto* dev = std::get_if<DevMetricBest>(&st.stopping); dev && !dev->metric.empty() &&
                                                                     !known_metric(dev->metric)) {
      throw PipelineError(where + "unknown metric '" + dev->metric + "'");
    }
    if (st.eval && st.eval->task != st.tasks.front().train.task) {
      throw PipelineError(where + "eval set '" + st.eval->id + "' has a different task");
    }
  }
  const auto& last = stages.back();
  if (last.kind != StageKind::FineTune) throw PipelineError("pipeline must end with a fine-tune stage");
  if (!last.eval && !last.tasks.front().dev) throw PipelineError("fine-tune stage needs an eval or dev set");
}

// ---- prepared examples ----

namespace {

// First and last context word covered by the answer, or nullopt when the
// answer does not start and end on word boundaries.
std::optional<std::pair<std::size_t, std::size_t>> answer_words(const QaExample& ex) {
  const auto spans = locate_words(ex.context);
  const std::size_t begin = ex.answer_start;
  const std::size_t end = begin + utf8_length(ex.answer_text);
  std::optional<std::size_t> first;
  for (std::size_t w = 0; w < spans.size(); ++w) {
    if (spans[w].char_begin == begin) first = w;
    if (first && spans[w].char_end == end) return std::make_pair(*first, w);
  }
  return std::nullopt;
}

}  // namespace

PreparedData prepare_examples(const Dataset& dataset, const Vocabulary& vocab, std::size_t max_len,
                              const MaskingPolicy& masking, std::uint64_t seed) {
  PreparedData out;
  out.task = dataset.task;
  switch (dataset.task) {
    case TaskKind::Mlm: {
      auto masked = mask_corpus(dataset.sentences(), vocab, max_len, masking, seed);
      out.skipped = masked.skipped;
      for (std::size_t i = 0; i < masked.examples.size(); ++i) {
        auto& ex = masked.examples[i];
        if (ex.selected.empty()) {
          ++out.dropped;
          continue;
        }
        PreparedExample p;
        p.input = std::move(masked.encodings[i]);
        p.input.token_ids = std::move(ex.input_ids);
        p.mlm_labels = std::move(ex.labels);
        out.examples.push_back(std::move(p));
      }
      break;
    }
    case TaskKind::Nli:
    case TaskKind::Sa:
      for (const auto& ex : dataset.classification()) {
        PreparedExample p;
        p.input = encode_text(ex.text_a, ex.text_b, vocab, max_len);
        p.class_label = label_index(dataset.task, ex.label);
        out.examples.push_back(std::move(p));
      }
      break;
    case TaskKind::Qa:
      for (const auto& ex : dataset.qa()) {
        const auto span = answer_words(ex);
        if (!span) {
          ++out.dropped;
          continue;
        }
        PreparedExample p;
        p.context_words = split_words(ex.context);
        p.answer = ex.answer_text;
        const auto question = split_words(ex.question);
        p.input = encode_pair(question, p.context_words, vocab, max_len);
        std::optional<std::size_t> start;
        std::optional<std::size_t> end;
        for (std::size_t t = 0; t < p.input.size(); ++t) {
          const auto& w = p.input.word_index[t];
          if (p.input.segment_ids[t] != 1 || !w) continue;
          if (*w == span->first && !start) start = t;
          if (*w == span->second) end = t;
        }
        if (!start || !end) {
          ++out.dropped;
          continue;
        }
        p.start = *start;
        p.end = *end;
        out.examples.push_back(std::move(p));
      }
      break;
  }
  return out;
}

ModelBatch make_model_batch(TaskKind task, std::span<const PreparedExample* const> items) {
  ModelBatch batch;
  for (const auto* ex : items) {
    batch.inputs.push_back(ex->input);
    switch (head_for(task)) {
      case Head::Mlm:
        batch.mlm_labels.push_back(ex->mlm_labels);
        break;
      case Head::Classify:
        batch.class_labels.push_back(ex->class_label);
        break;
      case Head::Span:
        batch.start_positions.push_back(ex->start);
        batch.end_positions.push_back(ex->end);
        break;
    }
  }
  return batch;
}

double evaluate_prepared(const ModelConfig& config, const Parameters& params, const PreparedData& data,
                         std::string_view metric, std::size_t batch_size) {
  if (!known_metric(metric)) throw std::invalid_argument("unknown metric '" + std::string(metric) + "'");
  if (data.examples.empty()) throw std::invalid_argument("cannot evaluate an empty set");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const Head head = head_for(data.task);
  const bool wants_span = metric == "token_f1";
  const bool wants_mlm = metric == "mlm_accuracy";
  if (wants_span != (head == Head::Span) || wants_mlm != (head == Head::Mlm)) {
    throw std::invalid_argument("metric '" + std::string(metric) + "' does not apply to " +
                                std::string(to_string(data.task)));
  }

  std::vector<std::size_t> predicted;
  std::vector<std::size_t> gold;
  std::vector<std::string> predicted_text;
  std::size_t mlm_correct = 0;
  std::size_t mlm_counted = 0;
  for (std::size_t i = 0; i < data.examples.size(); i += batch_size) {
    std::vector<const PreparedExample*> items;
    for (std::size_t k = i; k < std::min(data.examples.size(), i + batch_size); ++k) {
      items.push_back(&data.examples[k]);
    }
    const auto batch = make_model_batch(data.task, items);
    const auto logits = forward(config, params, batch, head);
    if (head == Head::Classify) {
      for (auto c : predict_classes(logits)) predicted.push_back(c);
      for (auto c : batch.class_labels) gold.push_back(c);
    } else if (head == Head::Span) {
      const auto spans = predict_spans(logits, batch);
      for (std::size_t b = 0; b < spans.size(); ++b) {
        const auto& enc = batch.inputs[b];
        const auto w0 = *enc.word_index[spans[b].start];
        const auto w1 = *enc.word_index[spans[b].end];
        const auto& words = items[b]->context_words;
        predicted_text.push_back(join_words(std::vector<std::string>(words.begin() + static_cast<long>(w0),
                                                                     words.begin() + static_cast<long>(w1) + 1),
                                            " "));
      }
    } else {
      for (std::size_t r = 0; r < logits.rows; ++r) {
        const auto label = batch.mlm_labels[r / config.max_len][r % config.max_len];
        if (label == kIgnoreLabel) continue;
        const double* row = logits.values.data() + r * logits.cols;
        const auto best = static_cast<TokenId>(std::max_element(row, row + logits.cols) - row);
        mlm_correct += best == label ? 1 : 0;
        ++mlm_counted;
      }
    }
  }

  if (metric == "accuracy") return evaluate_accuracy(predicted, gold);
  if (metric == "weighted_f1") {
    std::vector<std::size_t> labels(task_labels(data.task).size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i;
    return evaluate_weighted_f1(predicted, gold, labels).f1;
  }
  if (metric == "token_f1") {
    std::vector<std::string_view> p(predicted_text.begin(), predicted_text.end());
    std::vector<std::string_view> g;
    for (const auto& ex : data.examples) g.push_back(ex.answer);
    return mean_token_f1(p, g);
  }
  if (mlm_counted == 0) throw std::invalid_argument("no MLM targets to score");
  return static_cast<double>(mlm_correct) / static_cast<double>(mlm_counted);
}

// ---- pipeline ----

namespace {

Dataset placeholder(const Dataset& like, std::size_t n) {
  return Dataset{like.id, like.task, like.split, std::vector<TaggedSentence>(n)};
}

struct SourceData {
  TaskKind task = TaskKind::Mlm;
  std::string id;
  PreparedData train;
  std::optional<PreparedData> partner;
  std::optional<PreparedData> dev;
  std::string dev_metric;
};

struct StageRunner {
  const StageSpec& stage;
  std::size_t stage_index;
  std::uint64_t seed;
  const PipelineOptions& options;
  ModelConfig& config;
  Parameters& params;
  SeedResult& result;

  std::vector<SourceData> sources;
  // Per plan source: the example list it indexes and that list's task.
  std::vector<const std::vector<PreparedExample>*> lists;
  std::vector<TaskKind> list_task;
  std::vector<std::vector<PreparedExample>> merged;

  std::uint64_t stream(std::uint64_t tag) const { return derive_seed(seed, (stage_index << 20) | tag); }

  void prepare(StageLog& log) {
    for (std::size_t i = 0; i < stage.tasks.size(); ++i) {
      const auto& t = stage.tasks[i];
      SourceData s;
      s.task = t.train.task;
      s.id = t.train.id;
      s.train = prepare_examples(t.train, options.vocab, config.max_len, stage.masking, stream(16 * i));
      if (t.partner) {
        s.partner = prepare_examples(*t.partner, options.vocab, config.max_len, stage.masking, stream(16 * i + 1));
      }
      if (t.dev) {
        s.dev = prepare_examples(*t.dev, options.vocab, config.max_len, stage.masking, stream(16 * i + 2));
        s.dev_metric = dev_metric_for(stage, s.task);
      }
      for (const PreparedData* d : {&s.train, s.partner ? &*s.partner : nullptr}) {
        if (!d) continue;
        log.skipped_sentences += d->skipped;
        log.dropped_examples += d->dropped;
      }
      if (s.train.examples.empty() && (!s.partner || s.partner->examples.empty())) {
        throw PipelineError("stage '" + stage.name + "': no usable examples in '" + s.id + "'");
      }
      sources.push_back(std::move(s));
    }
    if (stage.kind == StageKind::MultiTask) {
      merged.reserve(sources.size());
      for (const auto& s : sources) {
        auto all = s.train.examples;
        if (s.partner) all.insert(all.end(), s.partner->examples.begin(), s.partner->examples.end());
        merged.push_back(std::move(all));
      }
      for (std::size_t i = 0; i < sources.size(); ++i) {
        lists.push_back(&merged[i]);
        list_task.push_back(sources[i].task);
      }
    } else {
      const auto& s = sources.front();
      lists.push_back(&s.train.examples);
      list_task.push_back(s.task);
      if (s.partner) {
        lists.push_back(&s.partner->examples);
        list_task.push_back(s.task);
      }
    }
  }

  BatchPlan plan_for_epoch(std::size_t epoch) const {
    const auto plan_seed = derive_seed(stream(0xF00), epoch);
    if (stage.kind == StageKind::MultiTask) {
      MixtureSpec spec;
      spec.limit = stage.mixture_limit;
      spec.temperature = stage.mixture_temperature;
      std::size_t capped = 0;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        spec.tasks.push_back({sources[i].id, merged[i].size()});
        capped += std::min(merged[i].size(), stage.mixture_limit);
      }
      return build_multitask_plan(spec, stage.batch_size, ceil_div(capped, stage.batch_size), plan_seed);
    }
    const auto& t = stage.tasks.front();
    const auto& s = sources.front();
    const auto primary = placeholder(t.train, s.train.examples.size());
    if (!t.partner) return build_monolingual_plan(primary, stage.batch_size, plan_seed);
    const auto partner = placeholder(*t.partner, s.partner->examples.size());
    if (t.schedule == ScheduleKind::Sequential) return sequential_schedule(primary, partner, stage.batch_size, plan_seed);
    if (primary.empty()) return build_monolingual_plan(partner, stage.batch_size, plan_seed);
    if (partner.empty()) return build_monolingual_plan(primary, stage.batch_size, plan_seed);
    return build_interspersed_batches(primary, partner, stage.batch_size, plan_seed);
  }

  void restore_heads(const Parameters& before, const std::set<Head>& used) {
    for (auto h : {Head::Mlm, Head::Classify, Head::Span}) {
      if (used.count(h)) continue;
      for (const auto& name : head_tensor_names(config, h)) params.at(name) = before.at(name);
    }
  }

  void run(StageLog& log, std::map<Head, TaskKind>& head_owner, const StageSpec* next) {
    std::set<Head> used;
    for (const auto& t : stage.tasks) {
      const Head h = head_for(t.train.task);
      used.insert(h);
      const auto it = head_owner.find(h);
      const bool changed = it == head_owner.end() || it->second != t.train.task;
      if (!changed) continue;
      if (h == Head::Classify) config.num_labels = task_labels(t.train.task).size();
      // a head that has never been trained is already fresh unless its shape changed
      if (it != head_owner.end() || h == Head::Classify) {
        reset_head(params, config, h, stream(0xE00 + static_cast<std::uint64_t>(h)));
        if (it != head_owner.end()) ++log.heads_reset[std::string(to_string(h))];
      }
      head_owner[h] = t.train.task;
    }
    const Parameters before = params;

    prepare(log);
    const auto first_plan = plan_for_epoch(0);
    result.plans.push_back(first_plan);

    std::size_t epoch_limit = stage.epochs;
    if (const auto* fixed = std::get_if<FixedEpochs>(&stage.stopping)) epoch_limit = fixed->epochs;

    OptimizerConfig opt = options.optimizer;
    opt.total_steps = std::max<std::size_t>(1, ceil_div(first_plan.batches.size() * epoch_limit, opt.grad_accum_steps));
    opt.warmup_steps = static_cast<std::size_t>(std::floor(options.warmup_ratio * static_cast<double>(opt.total_steps)));
    opt.warmup_steps = std::min(opt.warmup_steps, opt.total_steps);
    opt.validate();

    AdamState adam = make_adam_state(params);
    GradientAccumulator accum(params);
    std::size_t step = 0;
    auto apply = [&]() {
      auto grads = accum.take_mean();
      ++step;
      optimizer_step(adam, params, grads, opt, step);
    };

    std::vector<std::vector<MetricPoint>> traces(sources.size());
    std::vector<std::optional<Parameters>> best(sources.size());
    const bool track_dev = std::holds_alternative<DevMetricBest>(stage.stopping);

    for (std::size_t epoch = 0; epoch < epoch_limit; ++epoch) {
      const auto plan = epoch == 0 ? first_plan : plan_for_epoch(epoch);
      const std::size_t cadence = std::max<std::size_t>(1, plan.batches.size() / 10);
      double loss_sum = 0.0;
      std::size_t loss_batches = 0;
      std::size_t correct = 0;
      std::size_t counted = 0;
      bool stop = false;
      for (std::size_t b = 0; b < plan.batches.size(); ++b) {
        const auto& batch_plan = plan.batches[b];
        if (batch_plan.items.empty()) continue;
        const TaskKind task = list_task.at(batch_plan.items.front().source);
        std::vector<const PreparedExample*> items;
        for (const auto& ref : batch_plan.items) items.push_back(&lists.at(ref.source)->at(ref.index));
        const Head head = head_for(task);
        auto out = loss_and_gradients(config, params, make_model_batch(task, items), head);
        if (!std::isfinite(out.loss)) {
          throw NumericalError("non-finite loss in stage '" + stage.name + "' at epoch " + std::to_string(epoch + 1));
        }
        accum.add(out.gradients);
        ++log.micro_batches;
        ++log.head_updates[std::string(to_string(head))];
        loss_sum += out.loss;
        ++loss_batches;
        correct += out.correct;
        counted += out.counted;
        if (accum.count() == opt.grad_accum_steps) apply();

        if ((b + 1) % cadence == 0 || b + 1 == plan.batches.size()) {
          TrainingSnapshot snap;
          snap.train_loss = loss_sum / static_cast<double>(loss_batches);
          if (counted > 0) snap.train_acc = static_cast<double>(correct) / static_cast<double>(counted);
          snap.epoch = epoch;
          result.log.push_back({seed, stage.name, step, epoch + 1, *snap.train_loss, snap.train_acc.value_or(0.0),
                                "train_accuracy"});
          const bool early_rule = std::holds_alternative<TrainAccuracyRange>(stage.stopping) ||
                                  std::holds_alternative<TrainLossBelow>(stage.stopping);
          if (early_rule && (snap.train_acc || std::holds_alternative<TrainLossBelow>(stage.stopping)) &&
              should_stop(stage.stopping, snap)) {
            stop = true;
            break;
          }
        }
      }
      log.epochs_run = epoch + 1;
      if (loss_batches > 0) log.final_train_loss = loss_sum / static_cast<double>(loss_batches);
      log.final_train_accuracy =
          counted > 0 ? std::optional<double>(static_cast<double>(correct) / static_cast<double>(counted))
                      : std::nullopt;

      if (track_dev) {
        // pending micro-batches belong to this epoch's checkpoint
        if (accum.count() > 0) apply();
        for (std::size_t i = 0; i < sources.size(); ++i) {
          if (!sources[i].dev) continue;
          const double value = evaluate_prepared(config, params, *sources[i].dev, sources[i].dev_metric);
          result.log.push_back({seed, stage.name, step, epoch + 1, log.final_train_loss, value,
                                "dev_" + sources[i].dev_metric});
          traces[i].push_back({epoch + 1, value});
          if (select_best_checkpoint(traces[i]) == epoch + 1) best[i] = params;
        }
      }
      if (stop) {
        log.stopped_early = true;
        break;
      }
    }
    if (accum.count() > 0) apply();
    log.optimizer_steps = step;

    if (track_dev) {
      std::optional<std::size_t> chosen;
      for (std::size_t i = 0; i < sources.size(); ++i) {
        if (!best[i]) continue;
        const auto& trace = traces[i];
        const auto epoch = select_best_checkpoint(trace);
        const auto it = std::find_if(trace.begin(), trace.end(), [&](const MetricPoint& p) { return p.epoch == epoch; });
        log.best_dev[sources[i].id] = *it;
        if (!chosen) chosen = i;
        if (next && head_for(next->tasks.front().train.task) == head_for(sources[i].task)) chosen = i;
      }
      if (chosen) params = *best[*chosen];
    }
    restore_heads(before, used);
  }
};

}  // namespace

SeedResult run_seed(std::span<const StageSpec> stages, std::uint64_t seed, const PipelineOptions& options,
                    Parameters* final_params, ModelConfig* final_config) {
  validate_pipeline(stages);
  ModelConfig config = options.model;
  config.seed = seed;
  config.vocab_size = options.vocab.size();
  config.validate();
  Parameters params = init_parameters(config);

  SeedResult result;
  result.seed = seed;
  std::map<Head, TaskKind> head_owner;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    StageLog log;
    log.stage = st.name;
    log.kind = std::string(to_string(st.kind));
    StageRunner runner{st, i, seed, options, config, params, result, {}, {}, {}, {}};
    runner.run(log, head_owner, i + 1 < stages.size() ? &stages[i + 1] : nullptr);
    result.skipped_sentences += log.skipped_sentences;

    if (st.kind == StageKind::FineTune) {
      const auto metric = stage_metric(st);
      const auto& src = st.tasks.front();
      const auto scored = prepare_examples(st.eval ? *st.eval : *src.dev, options.vocab, config.max_len, st.masking,
                                           runner.stream(0xEEE));
      result.metric = evaluate_prepared(config, params, scored, metric);
      result.log.push_back({seed, st.name, log.optimizer_steps, log.epochs_run, log.final_train_loss, result.metric,
                            "eval_" + metric});
    }
    result.stages.push_back(std::move(log));
  }
  if (!params.all_finite()) throw NumericalError("parameters are not finite after training");
  if (final_params) *final_params = std::move(params);
  if (final_config) *final_config = config;
  return result;
}

std::string pipeline_digest(std::span<const StageSpec> stages, const PipelineOptions& options,
                            std::span<const std::uint64_t> seeds) {
  using nlohmann::json;
  const auto& m = options.model;
  const auto& o = options.optimizer;
  json doc;
  doc["model"] = {{"layers", m.layers}, {"heads", m.heads},         {"d_model", m.d_model},
                  {"d_ff", m.d_ff},     {"max_len", m.max_len},     {"init_std", m.init_std}};
  doc["optimizer"] = {{"learning_rate", o.learning_rate}, {"adam_epsilon", o.adam_epsilon}, {"beta1", o.beta1},
                      {"beta2", o.beta2},                 {"grad_accum_steps", o.grad_accum_steps},
                      {"max_grad_norm", o.max_grad_norm}, {"weight_decay", o.weight_decay}};
  doc["warmup_ratio"] = options.warmup_ratio;
  doc["vocab"] = fnv1a_hex(join_words(options.vocab.tokens(), "\n"));
  doc["seeds"] = std::vector<std::uint64_t>(seeds.begin(), seeds.end());
  auto describe_dataset = [](const Dataset& d) { return std::string(d.id) + ":" + std::to_string(d.size()); };
  for (const auto& st : stages) {
    json s{{"name", st.name},
           {"kind", to_string(st.kind)},
           {"epochs", st.epochs},
           {"batch_size", st.batch_size},
           {"stopping", describe(st.stopping)},
           {"masking", {to_string(st.masking.kind), st.masking.select_rate, st.masking.whole_word}},
           {"mixture", {st.mixture_limit, st.mixture_temperature}},
           {"metric", st.metric}};
    for (const auto& t : st.tasks) {
      s["tasks"].push_back({{"train", describe_dataset(t.train)},
                            {"partner", t.partner ? describe_dataset(*t.partner) : ""},
                            {"schedule", to_string(t.schedule)},
                            {"dev", t.dev ? describe_dataset(*t.dev) : ""}});
    }
    if (st.eval) s["eval"] = describe_dataset(*st.eval);
    doc["stages"].push_back(std::move(s));
  }
  return fnv1a_hex(doc.dump());
}

RunReport run_pipeline(std::span<const StageSpec> stages, std::span<const std::uint64_t> seeds,
                       const PipelineOptions& options) {
  if (seeds.empty()) throw std::invalid_argument("at least one seed is required");
  validate_pipeline(stages);

  std::vector<SeedResult> results(seeds.size());
  std::vector<std::exception_ptr> errors(seeds.size());
  auto work = [&](std::size_t i) {
    try {
      Parameters params;
      ModelConfig config;
      results[i] = run_seed(stages, seeds[i], options, &params, &config);
      if (options.checkpoint_dir) {
        Checkpoint ck;
        ck.config = config;
        ck.params = std::move(params);
        for (const auto& log : results[i].stages) ck.step += log.optimizer_steps;
        ck.vocabulary = options.vocab;
        ck.metadata["seed"] = std::to_string(seeds[i]);
        ck.metadata["metric"] = nlohmann::json(results[i].metric).dump();
        ck.metadata["config_digest"] = options.config_digest;
        save_checkpoint(*options.checkpoint_dir / ("seed-" + std::to_string(seeds[i]) + ".json"), ck);
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, seeds.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < seeds.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  RunReport report;
  report.metric = stage_metric(stages.back());
  report.config_digest = options.config_digest.empty() ? pipeline_digest(stages, options, seeds) : options.config_digest;
  std::vector<double> scores;
  for (auto& r : results) {
    scores.push_back(r.metric);
    report.skipped_sentences += r.skipped_sentences;
  }
  const auto summary = summarize(scores);
  report.mean = summary.mean;
  report.max = summary.max;
  report.min = summary.min;
  report.std = summary.std;
  report.per_seed = std::move(results);
  return report;
}

std::string RunReport::to_json() const {
  using nlohmann::json;
  json doc;
  doc["metric"] = metric;
  doc["config_digest"] = config_digest;
  doc["mean"] = mean;
  doc["max"] = max;
  doc["min"] = min;
  doc["std"] = std;
  doc["skipped_sentences"] = skipped_sentences;
  doc["per_seed"] = json::array();
  for (const auto& r : per_seed) {
    json s{{"seed", r.seed}, {"metric", r.metric}, {"skipped_sentences", r.skipped_sentences}};
    s["stages"] = json::array();
    for (const auto& log : r.stages) {
      json l{{"stage", log.stage},
             {"kind", log.kind},
             {"epochs_run", log.epochs_run},
             {"optimizer_steps", log.optimizer_steps},
             {"micro_batches", log.micro_batches},
             {"head_updates", log.head_updates},
             {"heads_reset", log.heads_reset},
             {"skipped_sentences", log.skipped_sentences},
             {"dropped_examples", log.dropped_examples},
             {"final_train_loss", log.final_train_loss},
             {"stopped_early", log.stopped_early}};
      l["final_train_accuracy"] = log.final_train_accuracy ? json(*log.final_train_accuracy) : json(nullptr);
      json best = json::object();
      for (const auto& [id, p] : log.best_dev) best[id] = {{"epoch", p.epoch}, {"value", p.value}};
      l["best_dev"] = std::move(best);
      s["stages"].push_back(std::move(l));
    }
    doc["per_seed"].push_back(std::move(s));
  }
  return doc.dump(2) + "\n";
}

std::string RunReport::log_jsonl() const {
  std::string out;
  for (const auto& r : per_seed) {
    for (const auto& rec : r.log) {
      nlohmann::json line{{"seed", rec.seed},     {"stage", rec.stage},   {"step", rec.step},
                          {"epoch", rec.epoch},   {"loss", rec.loss},     {"metric", rec.metric},
                          {"metric_name", rec.metric_name}, {"config_digest", config_digest}};
      out += line.dump();
      out += '\n';
    }
  }
  return out;
}

}  // namespace codemix
