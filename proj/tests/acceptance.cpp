#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codemix/corpus.hpp"
#include "codemix/masking.hpp"
#include "codemix/metrics.hpp"
#include "codemix/mixer.hpp"
#include "codemix/model.hpp"
#include "codemix/random.hpp"
#include "codemix/synthetic.hpp"
#include "codemix/text.hpp"
#include "codemix/tokenizer.hpp"
#include "codemix/trainer.hpp"
#include "codemix/translit.hpp"
#include "test_support.hpp"

using namespace codemix;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// every tolerance and budget in one place
constexpr double kBoundaryBudgetS = 5.0;
constexpr double kMaskingBudgetS = 30.0;
constexpr double kSelectRate = 0.15;
constexpr double kSelectTol = 0.01;
constexpr double kCorruptionTol = 0.02;
constexpr std::size_t kMinCandidates = 100000;
constexpr std::size_t kMinSelections = 10000;
constexpr double kMixingBudgetS = 10.0;
constexpr double kChiSquareAlpha = 0.001;
constexpr std::size_t kMixingDraws = 100000;
constexpr double kInterspersalBudgetS = 10.0;
constexpr double kSpanBudgetS = 10.0;
constexpr double kGradientTol = 1e-4;
constexpr double kGradientEpsilon = 1e-5;
constexpr double kGradientBudgetS = 120.0;
constexpr double kWeightedF1Tol = 1e-12;
constexpr double kEndToEndTarget = 0.95;
constexpr double kEndToEndBudgetS = 300.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

const std::array<std::string, 3> kLangs{"en", "hi", "es"};

// ---- 1 ----

std::vector<std::size_t> brute_force_boundaries(const std::vector<std::string>& tags) {
  std::vector<bool> hit(tags.size(), false);
  for (std::size_t i = 0; i + 1 < tags.size(); ++i) {
    if (tags[i] != tags[i + 1]) hit[i] = hit[i + 1] = true;
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (hit[i]) out.push_back(i);
  }
  return out;
}

Outcome boundary_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 1 + rng.below(50);
    const std::size_t langs = 1 + rng.below(3);
    std::vector<std::string> words;
    std::vector<std::string> tags;
    for (std::size_t i = 0; i < len; ++i) {
      words.push_back("w" + std::to_string(i));
      tags.push_back(kLangs[rng.below(langs)]);
    }
    if (boundary_word_indices(make_tagged_sentence(words, tags)) != brute_force_boundaries(tags)) ++mismatches;
  }
  const auto desk = make_tagged_sentence({"Yeh", "files", "ko", "desk", "pe", "rakh", "do"},
                                         {"hi", "en", "hi", "en", "hi", "hi", "hi"});
  const bool desk_ok = boundary_word_indices(desk) == std::vector<std::size_t>{0, 1, 2, 3, 4};
  const double s = seconds_since(t0);
  return {mismatches == 0 && desk_ok && s < kBoundaryBudgetS,
          "mismatches=" + std::to_string(mismatches) + " desk=" + (desk_ok ? "ok" : "wrong") + " time=" + fmt(s) + "s"};
}

// ---- 2 ----

std::vector<std::string> random_words(Rng& rng, std::size_t n) {
  static const std::string letters = "abcdefghijklmnopqrstuvwxyz";
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string w;
    const std::size_t len = 1 + rng.below(7);
    for (std::size_t k = 0; k < len; ++k) w += letters[rng.below(letters.size())];
    out.push_back(w);
  }
  return out;
}

TaggedSentence random_sentence(Rng& rng, const std::vector<std::string>& lexicon, std::size_t langs) {
  const std::size_t len = 1 + rng.below(30);
  std::vector<std::string> words;
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < len; ++i) {
    words.push_back(lexicon[rng.below(lexicon.size())]);
    tags.push_back(kLangs[rng.below(langs)]);
  }
  return make_tagged_sentence(words, tags);
}

Outcome masking_invariants() {
  const auto t0 = Clock::now();
  Rng rng(202);
  const auto lexicon = random_words(rng, 400);
  const auto vocab = train_vocabulary_from_words(lexicon, 300);
  constexpr std::size_t kMaxLen = 64;

  MaskingPolicy boundary;
  boundary.kind = MaskingKind::SwitchBoundary;
  std::size_t produced = 0;
  std::size_t outside = 0;
  std::size_t mono_not_skipped = 0;
  std::uint64_t seed = 0;
  while (produced < 10000) {
    const auto s = random_sentence(rng, lexicon, 2);
    const auto enc = encode(s, vocab, kMaxLen);
    const auto ex = make_mlm_example(enc, s, boundary, vocab.size(), seed++);
    const auto b = brute_force_boundaries([&] {
      std::vector<std::string> tags;
      for (const auto& w : s.words) tags.push_back(w.tag.code());
      return tags;
    }());
    if (b.empty()) {
      if (ex) ++mono_not_skipped;
      continue;
    }
    if (!ex) continue;
    ++produced;
    for (auto pos : ex->selected) {
      if (!std::binary_search(b.begin(), b.end(), *enc.word_index[pos])) ++outside;
    }
  }
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_sentence(rng, lexicon, 1);
    if (make_mlm_example(encode(s, vocab, kMaxLen), s, boundary, vocab.size(), seed++)) ++mono_not_skipped;
  }

  const MaskingPolicy standard;
  std::size_t candidates = 0;
  std::size_t selected = 0;
  std::array<std::size_t, 3> split{};  // mask, random, keep
  while (candidates < kMinCandidates || selected < kMinSelections) {
    const auto s = random_sentence(rng, lexicon, 3);
    const auto enc = encode(s, vocab, kMaxLen);
    for (std::size_t pos = 0; pos < enc.size(); ++pos) {
      if (enc.word_index[pos] && !Vocabulary::is_special(enc.token_ids[pos])) ++candidates;
    }
    const auto ex = make_mlm_example(enc, s, standard, vocab.size(), seed++);
    for (auto pos : ex->selected) {
      ++selected;
      if (ex->input_ids[pos] == kMaskId) {
        ++split[0];
      } else if (ex->input_ids[pos] == enc.token_ids[pos]) {
        ++split[2];  // includes random draws that hit the original id
      } else {
        ++split[1];
      }
    }
  }
  const double rate = static_cast<double>(selected) / static_cast<double>(candidates);
  const double n = static_cast<double>(selected);
  const std::array<double, 3> frac{split[0] / n, split[1] / n, split[2] / n};
  const std::array<double, 3> want{0.8, 0.1, 0.1};
  bool split_ok = true;
  for (int k = 0; k < 3; ++k) split_ok = split_ok && std::abs(frac[k] - want[k]) <= kCorruptionTol;
  const double s = seconds_since(t0);
  const bool pass = outside == 0 && mono_not_skipped == 0 && std::abs(rate - kSelectRate) <= kSelectTol && split_ok &&
                    s < kMaskingBudgetS;
  return {pass, "outside=" + std::to_string(outside) + " mono_not_skipped=" + std::to_string(mono_not_skipped) +
                    " rate=" + fmt(rate) + " over " + std::to_string(candidates) + " split=(" + fmt(frac[0]) + "," +
                    fmt(frac[1]) + "," + fmt(frac[2]) + ") over " + std::to_string(selected) + " time=" + fmt(s) +
                    "s"};
}

// ---- 3 ----

Outcome mixing_math() {
  const auto t0 = Clock::now();
  const MixtureSpec spec{{{"a", 250000}, {"b", 82000}}, 100000, 1.0};
  const auto rates = mixing_rates(spec);
  const bool exact = rates.size() == 2 && rates[0] == 100000.0 / 182000.0 && rates[1] == 82000.0 / 182000.0;
  const auto draws = sample_from_rates(rates, kMixingDraws, 303);
  std::array<double, 2> counts{};
  for (auto d : draws) counts.at(d) += 1.0;
  double chi2 = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double expected = rates[k] * static_cast<double>(kMixingDraws);
    chi2 += (counts[k] - expected) * (counts[k] - expected) / expected;
  }
  // survival function of chi-square with one degree of freedom
  const double p = std::erfc(std::sqrt(chi2 / 2.0));
  const double s = seconds_since(t0);
  return {exact && p > kChiSquareAlpha && s < kMixingBudgetS,
          std::string("exact=") + (exact ? "yes" : "no") + " chi2=" + fmt(chi2) + " p=" + fmt(p) + " time=" + fmt(s) +
              "s"};
}

// ---- 4 ----

Dataset placeholder(std::string id, std::size_t n) {
  return Dataset{std::move(id), TaskKind::Sa, Split::Train, std::vector<ClassificationExample>(n)};
}

Outcome interspersal() {
  const auto t0 = Clock::now();
  std::size_t bad = 0;
  std::size_t batches = 0;
  std::size_t plans = 0;
  for (std::size_t bsz : {2u, 7u, 8u}) {
    for (std::size_t ne : {1u, 5u, 16u, 33u, 100u}) {
      for (std::size_t nx : {1u, 4u, 16u, 50u, 99u}) {
        for (std::uint64_t seed : {1u, 2u}) {
          const auto plan = build_interspersed_batches(placeholder("en", ne), placeholder("x", nx), bsz, seed);
          ++plans;
          for (const auto& b : plan.batches) {
            ++batches;
            const auto diff = static_cast<long>(b.count_from(0)) - static_cast<long>(b.count_from(1));
            if (diff != 0 && diff != 1) ++bad;
          }
          const auto seq = sequential_schedule(placeholder("en", ne), placeholder("x", nx), bsz, seed);
          bool second = false;
          for (const auto& b : seq.batches) {
            const auto e = b.count_from(0);
            const auto x = b.count_from(1);
            if (e > 0 && x > 0) ++bad;
            if (x > 0) second = true;
            if (second && e > 0) ++bad;
          }
        }
      }
    }
  }
  const double s = seconds_since(t0);
  return {bad == 0 && s < kInterspersalBudgetS, "violations=" + std::to_string(bad) + " over " +
                                                    std::to_string(batches) + " batches in " + std::to_string(plans) +
                                                    " plans time=" + fmt(s) + "s"};
}

// ---- 5 ----

Outcome span_correction() {
  const auto t0 = Clock::now();
  Rng rng(505);
  const auto lexicon = random_words(rng, 300);
  const std::vector<std::shared_ptr<WordTransducer>> transducers{
      std::make_shared<IdentityTransducer>(), std::make_shared<UppercaseTransducer>(),
      std::make_shared<VowelDoublingTransducer>()};
  std::size_t failures = 0;
  std::size_t identity_diffs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t len = 2 + rng.below(40);
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) words.push_back(lexicon[rng.below(lexicon.size())]);
    const std::size_t first = rng.below(len);
    const std::size_t last = first + rng.below(std::min<std::size_t>(len - first, 5));
    std::string context;
    std::vector<std::size_t> offsets;
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0) context += rng.below(4) == 0 ? "  " : " ";
      offsets.push_back(utf8_length(context));
      context += words[i];
    }
    const std::size_t start = offsets[first];
    const std::size_t end = offsets[last] + utf8_length(words[last]);
    // the answer keeps the context's own spacing
    const std::string answer = utf8_substr(context, start, end - start);
    const QaExample ex{context, "what is " + words[0] + " ?", answer, start, LanguageTag("en")};
    for (std::size_t k = 0; k < transducers.size(); ++k) {
      try {
        const auto out = transliterate_qa_example(ex, *transducers[k]);
        const bool ok =
            out.verified && utf8_substr(out.new_context, out.new_start, utf8_length(out.new_answer)) == out.new_answer;
        if (!ok) ++failures;
        if (k == 0 && (out.new_context != ex.context || out.new_question != ex.question ||
                       out.new_answer != ex.answer_text || out.new_start != ex.answer_start)) {
          ++identity_diffs;
        }
      } catch (const std::exception&) {
        ++failures;
      }
    }
  }
  const double s = seconds_since(t0);
  return {failures == 0 && identity_diffs == 0 && s < kSpanBudgetS,
          "failures=" + std::to_string(failures) + "/3000 identity_diffs=" + std::to_string(identity_diffs) +
              " time=" + fmt(s) + "s"};
}

// ---- 6 ----

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  const auto c = codemix::testing::gradient_config();
  const auto p = init_parameters(c);
  const auto b = codemix::testing::random_batch(c, 3, 606);
  std::string detail;
  bool pass = true;
  for (auto head : {Head::Mlm, Head::Classify, Head::Span}) {
    const auto r = gradient_check(c, p, b, head, kGradientEpsilon, 20);
    pass = pass && r.max_relative_error < kGradientTol;
    detail += std::string(to_string(head)) + "=" + fmt(r.max_relative_error) + " (" +
              std::to_string(r.coordinates_checked) + " coords, " + std::to_string(r.below_resolution) +
              " below resolution) ";
  }
  const double s = seconds_since(t0);
  return {pass && s < kGradientBudgetS, detail + "time=" + fmt(s) + "s"};
}

// ---- 7 ----

double oracle_token_f1(const std::string& pred, const std::string& gold) {
  auto p = split_words(pred);
  auto g = split_words(gold);
  if (p.empty() || g.empty()) return 0.0;
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  std::size_t common = 0;
  for (std::size_t i = 0, j = 0; i < p.size() && j < g.size();) {
    if (p[i] == g[j]) {
      ++common;
      ++i;
      ++j;
    } else if (p[i] < g[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

double oracle_weighted_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold, std::size_t k) {
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 0.0));  // [gold][pred]
  for (std::size_t i = 0; i < gold.size(); ++i) m[gold[i]][pred[i]] += 1.0;
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double row = 0.0;
    double col = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row += m[c][j];
      col += m[j][c];
    }
    if (row == 0.0) continue;
    const double tp = m[c][c];
    const double precision = col == 0.0 ? 0.0 : tp / col;
    const double recall = tp / row;
    const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    total += row / static_cast<double>(gold.size()) * f1;
  }
  return total;
}

Outcome metric_oracles() {
  Rng rng(707);
  const std::vector<std::string> pool{"the", "desk", "a", "files", "on", "rakh", "do", "ko"};
  auto phrase = [&] {
    std::string s;
    const std::size_t n = rng.below(6);
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + pool[rng.below(pool.size())];
    return s;
  };
  std::size_t token_mismatch = 0;
  for (int i = 0; i < 500; ++i) {
    const auto p = phrase();
    const auto g = phrase();
    if (evaluate_token_f1(p, g).f1 != oracle_token_f1(p, g)) ++token_mismatch;
  }
  const bool desk = evaluate_token_f1("the desk", "desk").f1 == 2.0 / 3.0;
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t n = 1 + rng.below(60);
    std::vector<std::size_t> pred;
    std::vector<std::size_t> gold;
    for (std::size_t j = 0; j < n; ++j) {
      pred.push_back(rng.below(k));
      gold.push_back(rng.below(k));
    }
    std::vector<std::size_t> labels(k);
    for (std::size_t j = 0; j < k; ++j) labels[j] = j;
    worst = std::max(worst, std::abs(evaluate_weighted_f1(pred, gold, labels).f1 - oracle_weighted_f1(pred, gold, k)));
  }
  return {token_mismatch == 0 && desk && worst <= kWeightedF1Tol,
          "token_mismatches=" + std::to_string(token_mismatch) + "/500 desk=" + (desk ? "2/3" : "wrong") +
              " weighted_max_err=" + fmt(worst)};
}

// ---- 8 ----

RunReport synthetic_run() {
  const auto lex = make_synthetic_lexicon(40, 3, 11);
  const auto mlm =
      make_mlm_dataset("cs-mlm", Split::Train, synthetic_sentences(lex, SyntheticMix::CodeSwitched, 400, 4, 10, 1));
  const auto en = make_classification_dataset("sa-en", TaskKind::Sa, Split::Train,
                                              synthetic_sentiment(lex, SyntheticMix::English, 300, 4, 10, 2));
  const auto x = make_classification_dataset("sa-x", TaskKind::Sa, Split::Train,
                                             synthetic_sentiment(lex, SyntheticMix::Other, 300, 4, 10, 3));
  const auto cs = make_classification_dataset("sa-cs", TaskKind::Sa, Split::Train,
                                              synthetic_sentiment(lex, SyntheticMix::CodeSwitched, 300, 4, 10, 4));
  const auto dev = make_classification_dataset("sa-cs-dev", TaskKind::Sa, Split::Dev,
                                               synthetic_sentiment(lex, SyntheticMix::CodeSwitched, 200, 4, 10, 5));
  PipelineOptions opt;
  opt.vocab = train_vocabulary(mlm.sentences(), 200);
  opt.model.layers = 2;
  opt.model.heads = 4;
  opt.model.d_model = 32;
  opt.model.d_ff = 64;
  opt.model.max_len = 16;
  opt.model.init_std = 0.1;
  opt.optimizer.learning_rate = 1e-3;
  opt.optimizer.grad_accum_steps = 1;

  std::vector<StageSpec> stages(3);
  stages[0].name = "cs-mlm";
  stages[0].kind = StageKind::MlmPretrain;
  stages[0].tasks = {TaskSource{mlm, std::nullopt, ScheduleKind::Monolingual, std::nullopt}};
  stages[0].batch_size = 16;
  stages[0].masking.kind = MaskingKind::SwitchBoundary;
  stages[1].name = "bilingual-sa";
  stages[1].kind = StageKind::SingleTask;
  stages[1].tasks = {TaskSource{en, x, ScheduleKind::Interspersed, std::nullopt}};
  stages[1].batch_size = 16;
  stages[1].epochs = 6;
  stages[1].stopping = FixedEpochs{6};
  stages[2].name = "target-sa";
  stages[2].kind = StageKind::FineTune;
  stages[2].tasks = {TaskSource{cs, std::nullopt, ScheduleKind::Monolingual, dev}};
  stages[2].batch_size = 16;
  stages[2].epochs = 6;
  stages[2].stopping = FixedEpochs{6};
  stages[2].metric = "accuracy";
  const std::vector<std::uint64_t> seeds{7};
  return run_pipeline(stages, seeds, opt);
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  const auto a = synthetic_run();
  const double first = seconds_since(t0);
  const auto b = synthetic_run();
  const bool identical = a.to_json() == b.to_json();
  return {a.metric == "accuracy" && a.mean >= kEndToEndTarget && first < kEndToEndBudgetS && identical,
          "dev_accuracy=" + fmt(a.mean) + " time=" + fmt(first) + "s identical=" + (identical ? "yes" : "no")};
}

// ---- 9 ----

Outcome stopping_rules() {
  const TrainAccuracyRange range{0.70, 0.80};
  auto acc = [](double v) { return TrainingSnapshot{v, std::nullopt, std::nullopt, std::nullopt}; };
  const bool range_ok = should_stop(range, acc(0.75)) && !should_stop(range, acc(0.69)) &&
                        !should_stop(range, acc(0.81));
  const bool loss_ok = should_stop(TrainLossBelow{0.1}, {std::nullopt, 0.09, std::nullopt, std::nullopt});
  const std::vector<MetricPoint> trace{{0, 0.41}, {1, 0.66}, {2, 0.72}, {3, 0.69}, {4, 0.70}};
  const bool best_ok = select_best_checkpoint(trace) == 2;
  return {range_ok && loss_ok && best_ok, std::string("range=") + (range_ok ? "ok" : "wrong") +
                                              " loss=" + (loss_ok ? "ok" : "wrong") +
                                              " dev_best=" + (best_ok ? "epoch 2" : "wrong")};
}

// ---- 10 ----

struct Command {
  int exit_code = -1;
  std::string output;
};

Command run_command(const std::string& cmd) {
  Command out;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return out;
  std::array<char, 512> buf{};
  while (fgets(buf.data(), static_cast<int>(buf.size()), pipe)) out.output += buf.data();
  const int status = pclose(pipe);
  out.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

Outcome cli_smoke() {
#ifndef CODEMIX_CLI
  return {false, "CLI not built"};
#else
  const std::filesystem::path root = CODEMIX_SOURCE_DIR;
  const auto work = std::filesystem::temp_directory_path() / "codemix_acceptance_cli";
  std::filesystem::remove_all(work);
  std::filesystem::create_directories(work);
  const std::string cli = CODEMIX_CLI;
  const auto ok = run_command(cli + " run-experiment --config " + (root / "configs" / "sample_experiment.json").string() +
                              " --output-dir " + (work / "out").string());
  bool fields = false;
  if (ok.exit_code == 0) {
    std::ifstream in(work / "out" / "report.json");
    const auto report = json::parse(in, nullptr, false);
    fields = !report.is_discarded() && report.contains("per_seed") && report.contains("mean") &&
             report.contains("max") && !report["per_seed"].empty();
  }

  std::ifstream sample(root / "configs" / "sample_experiment.json");
  auto doc = json::parse(sample);
  for (auto& [name, ds] : doc["datasets"].items()) {
    ds["path"] = (root / "configs" / ds["path"].get<std::string>()).lexically_normal().string();
  }
  doc["stages"][1]["kind"] = "pretrain";
  const auto bad_path = work / "malformed.json";
  std::ofstream(bad_path) << doc.dump(2);
  const auto bad = run_command(cli + " run-experiment --config " + bad_path.string());
  const bool names_field = bad.output.find("stages[1].kind") != std::string::npos;
  std::string diag = bad.output.substr(0, bad.output.find('\n'));
  return {ok.exit_code == 0 && fields && bad.exit_code == 2 && names_field,
          "sample_exit=" + std::to_string(ok.exit_code) + " report_fields=" + (fields ? "ok" : "missing") +
              " malformed_exit=" + std::to_string(bad.exit_code) + " diagnostic=\"" + diag + "\""};
#endif
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"boundary oracle", boundary_oracle},   {"masking invariants", masking_invariants},
      {"mixing math", mixing_math},           {"interspersal", interspersal},
      {"span correction", span_correction},   {"gradient fidelity", gradient_fidelity},
      {"metric oracles", metric_oracles},     {"end-to-end synthetic", end_to_end},
      {"stopping rules", stopping_rules},     {"CLI smoke", cli_smoke},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << i + 1 << ": " << criteria[i].first << " | "
              << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
