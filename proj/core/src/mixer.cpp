#include "codemix/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "codemix/random.hpp"

namespace codemix {

void MixtureSpec::validate() const {
  if (tasks.empty()) throw std::invalid_argument("mixture needs at least one task");
  if (limit < 1) throw std::invalid_argument("mixture limit must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("mixture temperature must be positive");
  for (const auto& t : tasks) {
    if (t.examples < 1) throw std::invalid_argument("task '" + t.task_id + "' has no examples");
  }
}

std::vector<double> mixing_rates(const MixtureSpec& spec) {
  spec.validate();
  std::vector<double> rates;
  rates.reserve(spec.tasks.size());
  if (spec.temperature == 1.0) {
    std::size_t total = 0;
    for (const auto& t : spec.tasks) total += std::min(t.examples, spec.limit);
    for (const auto& t : spec.tasks) {
      rates.push_back(static_cast<double>(std::min(t.examples, spec.limit)) / static_cast<double>(total));
    }
    return rates;
  }
  double total = 0.0;
  for (const auto& t : spec.tasks) {
    rates.push_back(std::pow(static_cast<double>(std::min(t.examples, spec.limit)), 1.0 / spec.temperature));
    total += rates.back();
  }
  for (auto& r : rates) r /= total;
  return rates;
}

std::vector<std::size_t> sample_from_rates(std::span<const double> rates, std::size_t n_draws, std::uint64_t seed) {
  if (rates.empty()) throw std::invalid_argument("no rates to sample from");
  std::vector<double> cdf(rates.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    if (!(rates[i] >= 0.0)) throw std::invalid_argument("rates must be non-negative");
    acc += rates[i];
    cdf[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("rates must have positive mass");
  // the last category with positive mass absorbs rounding at the top end
  std::size_t last = rates.size() - 1;
  while (last > 0 && rates[last] == 0.0) --last;

  Rng rng(seed);
  std::vector<std::size_t> draws(n_draws);
  for (auto& d : draws) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    d = std::min(static_cast<std::size_t>(it - cdf.begin()), last);
  }
  return draws;
}

std::vector<std::size_t> sample_batch_assignments(const MixtureSpec& spec, std::size_t n_batches,
                                                  std::uint64_t seed) {
  if (n_batches < 1) throw std::invalid_argument("n_batches must be >= 1");
  const auto rates = mixing_rates(spec);
  return sample_from_rates(rates, n_batches, seed);
}

std::size_t Batch::count_from(std::size_t source) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [&](const ExampleRef& r) { return r.source == source; }));
}

ExampleStream::ExampleStream(std::size_t size, std::uint64_t seed) : seed_(seed), order_(size) {
  if (size == 0) throw std::invalid_argument("cannot stream an empty dataset");
  reshuffle();
}

void ExampleStream::reshuffle() {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, passes_));
  rng.shuffle(order_);
  cursor_ = 0;
}

std::size_t ExampleStream::next() {
  if (cursor_ == order_.size()) {
    ++passes_;
    reshuffle();
  }
  return order_[cursor_++];
}

namespace {

void require_same_task(const Dataset& a, const Dataset& b) {
  if (a.task != b.task) {
    throw DataError("task mismatch: '" + a.id + "' is " + std::string(to_string(a.task)) + ", '" + b.id + "' is " +
                    std::string(to_string(b.task)));
  }
}

void require_batch_size(std::size_t batch_size, std::size_t minimum) {
  if (batch_size < minimum) throw std::invalid_argument("batch_size must be >= " + std::to_string(minimum));
}

void append_pass(BatchPlan& plan, std::size_t source, std::size_t size, std::uint64_t seed) {
  if (size == 0) return;
  const auto order = shuffled_indices(size, seed);
  for (std::size_t i = 0; i < order.size(); i += plan.batch_size) {
    Batch b;
    const auto end = std::min(order.size(), i + plan.batch_size);
    for (std::size_t k = i; k < end; ++k) b.items.push_back({source, order[k]});
    plan.batches.push_back(std::move(b));
  }
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

BatchPlan build_monolingual_plan(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed) {
  require_batch_size(batch_size, 1);
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.sources = {dataset.id};
  plan.tasks = {std::string(to_string(dataset.task))};
  append_pass(plan, 0, dataset.size(), derive_seed(seed, 0));
  return plan;
}

BatchPlan build_interspersed_batches(const Dataset& en, const Dataset& x, std::size_t batch_size,
                                     std::uint64_t seed) {
  require_same_task(en, x);
  require_batch_size(batch_size, 2);
  if (en.empty() || x.empty()) throw std::invalid_argument("interspersed batches need two non-empty datasets");

  const std::size_t en_share = (batch_size + 1) / 2;
  const std::size_t x_share = batch_size / 2;
  const std::size_t en_batches = ceil_div(en.size(), en_share);
  const std::size_t x_batches = ceil_div(x.size(), x_share);
  bool en_drives = en_batches > x_batches;
  if (en_batches == x_batches) en_drives = en.size() >= x.size();
  const std::size_t n = std::max(en_batches, x_batches);

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.sources = {en.id, x.id};
  plan.tasks = {std::string(to_string(en.task))};

  ExampleStream en_stream(en.size(), derive_seed(seed, 0));
  ExampleStream x_stream(x.size(), derive_seed(seed, 1));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t en_need = en_share;
    std::size_t x_need = x_share;
    if (k + 1 == n) {
      if (en_drives) {
        en_need = en.size() - en_share * (n - 1);
        x_need = std::min(x_share, en_need);
      } else {
        x_need = x.size() - x_share * (n - 1);
        en_need = std::min(en_share, x_need + (en_share - x_share));
      }
    }
    Batch b;
    for (std::size_t i = 0; i < en_need; ++i) b.items.push_back({0, en_stream.next()});
    for (std::size_t i = 0; i < x_need; ++i) b.items.push_back({1, x_stream.next()});
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

BatchPlan sequential_schedule(const Dataset& first, const Dataset& second, std::size_t batch_size,
                              std::uint64_t seed) {
  require_same_task(first, second);
  require_batch_size(batch_size, 1);
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  plan.sources = {first.id};
  plan.tasks = {std::string(to_string(first.task))};
  append_pass(plan, 0, first.size(), derive_seed(seed, 0));
  if (!second.empty()) {
    plan.sources.push_back(second.id);
    append_pass(plan, 1, second.size(), derive_seed(seed, 1));
  }
  return plan;
}

BatchPlan build_multitask_plan(const MixtureSpec& spec, std::size_t batch_size, std::size_t n_batches,
                               std::uint64_t seed) {
  require_batch_size(batch_size, 1);
  const auto assignments = sample_batch_assignments(spec, n_batches, derive_seed(seed, 0xA5516));
  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  std::vector<ExampleStream> streams;
  for (std::size_t m = 0; m < spec.tasks.size(); ++m) {
    plan.sources.push_back(spec.tasks[m].task_id);
    plan.tasks.push_back(spec.tasks[m].task_id);
    streams.emplace_back(spec.tasks[m].examples, derive_seed(seed, m));
  }
  for (auto task : assignments) {
    Batch b;
    b.task = task;
    for (std::size_t i = 0; i < batch_size; ++i) b.items.push_back({task, streams[task].next()});
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

std::string format_plan_line(const BatchPlan& plan, std::size_t batch, std::string_view config_digest) {
  const auto& b = plan.batches.at(batch);
  nlohmann::json composition = nlohmann::json::object();
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : b.items) ++counts[r.source];
  for (const auto& [src, n] : counts) composition[plan.sources.at(src)] = n;
  nlohmann::json items = nlohmann::json::array();
  for (const auto& r : b.items) items.push_back({r.source, r.index});
  nlohmann::json doc{{"batch", batch}, {"task", plan.tasks.empty() ? "" : plan.tasks.at(b.task)},
                     {"composition", composition}, {"items", items}};
  if (!config_digest.empty()) doc["config_digest"] = std::string(config_digest);
  return doc.dump();
}

void write_plan_jsonl(const std::filesystem::path& path, const BatchPlan& plan, std::string_view config_digest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < plan.batches.size(); ++i) out << format_plan_line(plan, i, config_digest) << '\n';
}

}  // namespace codemix
