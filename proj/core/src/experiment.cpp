#include "codemix/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "codemix/random.hpp"
#include "codemix/text.hpp"

namespace codemix {

using nlohmann::json;

ConfigError::ConfigError(std::string field, const std::string& message)
    : std::runtime_error(field.empty() ? "config: " + message : "config field '" + field + "': " + message),
      field_(std::move(field)) {}

namespace {

// Walks one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const auto* v = get(key);
    if (!v) throw ConfigError(field(key), "missing");
    return *v;
  }

  template <class T>
  void read(const std::string& key, T& out) {
    if (const auto* v = get(key)) out = as<T>(*v, field(key));
  }

  template <class T>
  static T as(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
        throw ConfigError(where, "expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where, "expected a number");
    } else {
      if (!v.is_string()) throw ConfigError(where, "expected a string");
    }
    return v.get<T>();
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown key");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto guarded(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(field, e.what());
  }
}

StoppingRule parse_stopping(const json& node, const std::string& path) {
  Section s(node, path);
  const auto rule = Section::as<std::string>(s.require("rule"), s.field("rule"));
  StoppingRule out;
  if (rule == "fixed_epochs") {
    FixedEpochs r;
    r.epochs = Section::as<std::size_t>(s.require("epochs"), s.field("epochs"));
    out = r;
  } else if (rule == "train_accuracy_range") {
    TrainAccuracyRange r;
    s.read("lo", r.lo);
    s.read("hi", r.hi);
    out = r;
  } else if (rule == "train_loss_below") {
    TrainLossBelow r;
    s.read("threshold", r.threshold);
    out = r;
  } else if (rule == "dev_metric_best") {
    DevMetricBest r;
    s.read("metric", r.metric);
    out = r;
  } else {
    throw ConfigError(s.field("rule"), "unknown stopping rule '" + rule + "'");
  }
  s.finish();
  guarded(path, [&] {
    validate_stopping_rule(out);
    return 0;
  });
  return out;
}

json stopping_json(const StoppingRule& rule) {
  return std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, FixedEpochs>) return {{"rule", "fixed_epochs"}, {"epochs", r.epochs}};
        if constexpr (std::is_same_v<T, TrainAccuracyRange>) {
          return {{"rule", "train_accuracy_range"}, {"lo", r.lo}, {"hi", r.hi}};
        }
        if constexpr (std::is_same_v<T, TrainLossBelow>) {
          return {{"rule", "train_loss_below"}, {"threshold", r.threshold}};
        }
        if constexpr (std::is_same_v<T, DevMetricBest>) return {{"rule", "dev_metric_best"}, {"metric", r.metric}};
      },
      rule);
}

DatasetRef parse_dataset_ref(const json& node, const std::string& path, const std::filesystem::path& base) {
  Section s(node, path);
  DatasetRef ref;
  ref.source = Section::as<std::string>(s.require("path"), s.field("path"));
  ref.path = base / ref.source;
  const auto task = Section::as<std::string>(s.require("task"), s.field("task"));
  ref.task = guarded(s.field("task"), [&] { return parse_task_kind(task); });
  std::string split = "train";
  s.read("split", split);
  ref.split = guarded(s.field("split"), [&] { return parse_split(split); });
  s.finish();
  if (!std::filesystem::exists(ref.path)) throw ConfigError(s.field("path"), "file not found: " + ref.path.string());
  return ref;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON (") + e.what() + ")");
  }
  ExperimentConfig cfg;
  Section root(doc, "");

  if (const auto* m = root.get("model")) {
    Section s(*m, "model");
    s.read("layers", cfg.model.layers);
    s.read("heads", cfg.model.heads);
    s.read("d_model", cfg.model.d_model);
    s.read("d_ff", cfg.model.d_ff);
    s.read("max_len", cfg.model.max_len);
    s.read("init_std", cfg.model.init_std);
    s.finish();
  }
  if (const auto* o = root.get("optimizer")) {
    Section s(*o, "optimizer");
    s.read("learning_rate", cfg.optimizer.learning_rate);
    s.read("adam_epsilon", cfg.optimizer.adam_epsilon);
    s.read("beta1", cfg.optimizer.beta1);
    s.read("beta2", cfg.optimizer.beta2);
    s.read("grad_accum_steps", cfg.optimizer.grad_accum_steps);
    s.read("max_grad_norm", cfg.optimizer.max_grad_norm);
    s.read("weight_decay", cfg.optimizer.weight_decay);
    s.read("warmup_ratio", cfg.warmup_ratio);
    s.finish();
    guarded("optimizer", [&] {
      cfg.optimizer.validate();
      return 0;
    });
    if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio <= 1.0)) {
      throw ConfigError("optimizer.warmup_ratio", "must be in [0, 1]");
    }
  }
  if (const auto* t = root.get("tokenizer")) {
    Section s(*t, "tokenizer");
    s.read("vocab_size", cfg.vocab_size);
    if (const auto* v = s.get("vocab")) {
      DatasetRef ref;
      ref.source = Section::as<std::string>(*v, s.field("vocab"));
      ref.path = base_dir / ref.source;
      if (!std::filesystem::exists(ref.path)) throw ConfigError(s.field("vocab"), "file not found: " + ref.path.string());
      cfg.vocab_file = ref;
    }
    s.finish();
  }
  if (const auto* m = root.get("masking")) {
    Section s(*m, "masking");
    std::string policy(to_string(cfg.masking.kind));
    s.read("policy", policy);
    cfg.masking.kind = guarded(s.field("policy"), [&] { return parse_masking_kind(policy); });
    s.read("select_rate", cfg.masking.select_rate);
    s.read("whole_word", cfg.masking.whole_word);
    if (const auto* c = s.get("corruption")) {
      Section cs(*c, s.field("corruption"));
      cs.read("mask", cfg.masking.corruption.mask);
      cs.read("random", cfg.masking.corruption.random);
      cs.read("keep", cfg.masking.corruption.keep);
      cs.finish();
    }
    s.finish();
    guarded("masking", [&] {
      cfg.masking.validate();
      return 0;
    });
  }
  if (const auto* m = root.get("mixture")) {
    Section s(*m, "mixture");
    s.read("limit", cfg.mixture_limit);
    s.read("temperature", cfg.mixture_temperature);
    s.finish();
    if (cfg.mixture_limit == 0) throw ConfigError("mixture.limit", "must be positive");
    if (!(cfg.mixture_temperature > 0.0)) throw ConfigError("mixture.temperature", "must be positive");
  }

  const auto& datasets = root.require("datasets");
  if (!datasets.is_object() || datasets.empty()) throw ConfigError("datasets", "expected a non-empty object");
  for (const auto& [name, node] : datasets.items()) {
    cfg.datasets[name] = parse_dataset_ref(node, "datasets." + name, base_dir);
  }

  auto dataset_name = [&](const json& v, const std::string& where) {
    const auto name = Section::as<std::string>(v, where);
    if (!cfg.datasets.count(name)) throw ConfigError(where, "unknown dataset '" + name + "'");
    return name;
  };

  const auto& stages = root.require("stages");
  if (!stages.is_array() || stages.empty()) throw ConfigError("stages", "expected a non-empty array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string path = "stages[" + std::to_string(i) + "]";
    Section s(stages[i], path);
    StageConfig st;
    st.name = "stage" + std::to_string(i);
    s.read("name", st.name);
    const auto kind = Section::as<std::string>(s.require("kind"), s.field("kind"));
    st.kind = guarded(s.field("kind"), [&] { return parse_stage_kind(kind); });
    s.read("epochs", st.epochs);
    s.read("batch_size", st.batch_size);
    s.read("metric", st.metric);
    if (const auto* r = s.get("stopping")) {
      st.stopping = parse_stopping(*r, s.field("stopping"));
    } else {
      st.stopping = FixedEpochs{st.epochs};
    }
    if (const auto* e = s.get("eval")) st.eval = dataset_name(*e, s.field("eval"));
    const auto& tasks = s.require("tasks");
    if (!tasks.is_array() || tasks.empty()) throw ConfigError(s.field("tasks"), "expected a non-empty array");
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const std::string tpath = s.field("tasks") + "[" + std::to_string(k) + "]";
      Section ts(tasks[k], tpath);
      TaskRef t;
      t.train = dataset_name(ts.require("train"), ts.field("train"));
      if (const auto* p = ts.get("partner")) t.partner = dataset_name(*p, ts.field("partner"));
      if (const auto* d = ts.get("dev")) t.dev = dataset_name(*d, ts.field("dev"));
      if (const auto* sc = ts.get("schedule")) {
        const auto name = Section::as<std::string>(*sc, ts.field("schedule"));
        t.schedule = guarded(ts.field("schedule"), [&] { return parse_schedule_kind(name); });
      } else if (t.partner) {
        t.schedule = ScheduleKind::Interspersed;
      }
      ts.finish();
      st.tasks.push_back(std::move(t));
    }
    s.finish();
    if (st.epochs == 0) throw ConfigError(s.field("epochs"), "must be positive");
    if (st.batch_size == 0) throw ConfigError(s.field("batch_size"), "must be positive");
    cfg.stages.push_back(std::move(st));
  }

  if (const auto* seeds = root.get("seeds")) {
    if (!seeds->is_array() || seeds->empty()) throw ConfigError("seeds", "expected a non-empty array");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < seeds->size(); ++i) {
      cfg.seeds.push_back(Section::as<std::uint64_t>((*seeds)[i], "seeds[" + std::to_string(i) + "]"));
    }
  }
  if (const auto* o = root.get("output_dir")) cfg.output_dir = base_dir / Section::as<std::string>(*o, "output_dir");
  else cfg.output_dir = base_dir / cfg.output_dir;
  root.read("workers", cfg.workers);
  if (cfg.workers == 0) throw ConfigError("workers", "must be positive");
  root.finish();

  ModelConfig probe = cfg.model;
  probe.vocab_size = std::max<std::size_t>(cfg.vocab_size, kNumSpecials + 1);
  guarded("model", [&] {
    probe.validate();
    return 0;
  });
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config(buf.str(), path.has_parent_path() ? path.parent_path() : ".");
}

std::string ExperimentConfig::canonical_json() const {
  json doc;
  doc["model"] = {{"layers", model.layers}, {"heads", model.heads},     {"d_model", model.d_model},
                  {"d_ff", model.d_ff},     {"max_len", model.max_len}, {"init_std", model.init_std}};
  doc["optimizer"] = {{"learning_rate", optimizer.learning_rate},
                      {"adam_epsilon", optimizer.adam_epsilon},
                      {"beta1", optimizer.beta1},
                      {"beta2", optimizer.beta2},
                      {"grad_accum_steps", optimizer.grad_accum_steps},
                      {"max_grad_norm", optimizer.max_grad_norm},
                      {"weight_decay", optimizer.weight_decay},
                      {"warmup_ratio", warmup_ratio}};
  doc["tokenizer"] = {{"vocab_size", vocab_size}};
  if (vocab_file) doc["tokenizer"]["vocab"] = vocab_file->source;
  doc["masking"] = {{"policy", to_string(masking.kind)},
                    {"select_rate", masking.select_rate},
                    {"whole_word", masking.whole_word},
                    {"corruption",
                     {{"mask", masking.corruption.mask},
                      {"random", masking.corruption.random},
                      {"keep", masking.corruption.keep}}}};
  doc["mixture"] = {{"limit", mixture_limit}, {"temperature", mixture_temperature}};
  for (const auto& [name, ref] : datasets) {
    doc["datasets"][name] = {{"path", ref.source}, {"task", to_string(ref.task)}, {"split", to_string(ref.split)}};
  }
  for (const auto& st : stages) {
    json s{{"name", st.name},
           {"kind", to_string(st.kind)},
           {"epochs", st.epochs},
           {"batch_size", st.batch_size},
           {"metric", st.metric},
           {"stopping", stopping_json(st.stopping)}};
    if (st.eval) s["eval"] = *st.eval;
    for (const auto& t : st.tasks) {
      json tj{{"train", t.train}, {"schedule", to_string(t.schedule)}};
      if (t.partner) tj["partner"] = *t.partner;
      if (t.dev) tj["dev"] = *t.dev;
      s["tasks"].push_back(std::move(tj));
    }
    doc["stages"].push_back(std::move(s));
  }
  doc["seeds"] = seeds;
  return doc.dump();
}

std::string ExperimentConfig::digest() const { return fnv1a_hex(canonical_json()); }

std::map<std::string, Dataset> load_config_datasets(const ExperimentConfig& config) {
  std::map<std::string, Dataset> out;
  for (const auto& [name, ref] : config.datasets) {
    out.emplace(name, guarded("datasets." + name, [&] { return load_dataset(ref.path, name, ref.task, ref.split); }));
  }
  return out;
}

Vocabulary build_experiment_vocabulary(const ExperimentConfig& config, const std::map<std::string, Dataset>& data) {
  if (config.vocab_file) return Vocabulary::load(config.vocab_file->path);
  std::vector<std::string> words;
  for (const auto& [name, d] : data) {
    if (d.split != Split::Train) continue;
    switch (d.task) {
      case TaskKind::Mlm:
        for (const auto& s : d.sentences()) {
          for (const auto& w : s.words) words.push_back(w.surface);
        }
        break;
      case TaskKind::Nli:
      case TaskKind::Sa:
        for (const auto& ex : d.classification()) {
          for (auto& w : split_words(ex.text_a)) words.push_back(std::move(w));
          if (ex.text_b) {
            for (auto& w : split_words(*ex.text_b)) words.push_back(std::move(w));
          }
        }
        break;
      case TaskKind::Qa:
        for (const auto& ex : d.qa()) {
          for (auto& w : split_words(ex.question)) words.push_back(std::move(w));
          for (auto& w : split_words(ex.context)) words.push_back(std::move(w));
        }
        break;
    }
  }
  if (words.empty()) throw ConfigError("datasets", "no train split to build a vocabulary from");
  return guarded("tokenizer.vocab_size", [&] { return train_vocabulary_from_words(words, config.vocab_size); });
}

std::vector<StageSpec> build_stages(const ExperimentConfig& config, const std::map<std::string, Dataset>& data) {
  std::vector<StageSpec> out;
  for (const auto& sc : config.stages) {
    StageSpec st;
    st.name = sc.name;
    st.kind = sc.kind;
    st.epochs = sc.epochs;
    st.batch_size = sc.batch_size;
    st.stopping = sc.stopping;
    st.masking = config.masking;
    st.mixture_limit = config.mixture_limit;
    st.mixture_temperature = config.mixture_temperature;
    st.metric = sc.metric;
    if (sc.eval) st.eval = data.at(*sc.eval);
    for (const auto& t : sc.tasks) {
      TaskSource src;
      src.train = data.at(t.train);
      if (t.partner) src.partner = data.at(*t.partner);
      src.schedule = t.schedule;
      if (t.dev) src.dev = data.at(*t.dev);
      st.tasks.push_back(std::move(src));
    }
    out.push_back(std::move(st));
  }
  return out;
}

ExperimentOutputs run_experiment(const ExperimentConfig& config) {
  const auto data = load_config_datasets(config);
  const auto stages = build_stages(config, data);
  try {
    validate_pipeline(stages);
  } catch (const PipelineError& e) {
    throw ConfigError("stages", e.what());
  }

  PipelineOptions options;
  options.model = config.model;
  options.optimizer = config.optimizer;
  options.warmup_ratio = config.warmup_ratio;
  options.vocab = build_experiment_vocabulary(config, data);
  options.workers = config.workers;
  options.config_digest = config.digest();
  const auto& out_dir = config.output_dir;
  std::filesystem::create_directories(out_dir);
  options.checkpoint_dir = out_dir / "checkpoints";

  auto report = run_pipeline(stages, config.seeds, options);

  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / name).string());
    out << content;
  };
  write("report.json", report.to_json());
  write("train_log.jsonl", report.log_jsonl());
  options.vocab.save(out_dir / "vocab.txt");

  std::string plan_lines;
  for (const auto& plan : report.per_seed.front().plans) {
    for (std::size_t b = 0; b < plan.batches.size(); ++b) {
      plan_lines += format_plan_line(plan, b, options.config_digest);
      plan_lines += '\n';
    }
  }
  write("plan.jsonl", plan_lines);

  // Same stream the trainer uses for the first MLM source of the first seed.
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const auto it = std::find_if(st.tasks.begin(), st.tasks.end(),
                                 [](const TaskSource& t) { return t.train.task == TaskKind::Mlm; });
    if (it == st.tasks.end()) continue;
    const auto k = static_cast<std::uint64_t>(it - st.tasks.begin());
    const auto masked = mask_corpus(it->train.sentences(), options.vocab, config.model.max_len, st.masking,
                                    derive_seed(config.seeds.front(), (i << 20) | (16 * k)));
    std::string lines;
    for (const auto& ex : masked.examples) lines += format_masked_line(ex, options.config_digest) + '\n';
    write("masked.jsonl", lines);
    break;
  }
  return {std::move(report), out_dir / "report.json"};
}

}  // namespace codemix
