#include "codemix/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace codemix {

using nlohmann::json;

namespace {

json tensors_to_json(const TensorSet& set) {
  json arr = json::array();
  for (const auto& t : set) {
    arr.push_back({{"name", t.name}, {"shape", t.shape}, {"decay", t.decay}, {"data", t.data}});
  }
  return arr;
}

TensorSet tensors_from_json(const json& arr) {
  TensorSet set;
  for (const auto& item : arr) {
    Tensor t(item.at("name").get<std::string>(), item.at("shape").get<std::vector<std::size_t>>(),
             item.at("decay").get<bool>());
    auto data = item.at("data").get<std::vector<double>>();
    if (data.size() != t.numel()) throw std::runtime_error("tensor '" + t.name + "' has the wrong element count");
    t.data = std::move(data);
    set.add(std::move(t));
  }
  return set;
}

json config_to_json(const ModelConfig& c) {
  return {{"layers", c.layers},     {"heads", c.heads},         {"d_model", c.d_model},
          {"d_ff", c.d_ff},         {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"num_labels", c.num_labels}, {"seed", c.seed},         {"init_std", c.init_std}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.num_labels = j.at("num_labels").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.init_std = j.at("init_std").get<double>();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const Checkpoint& ck) {
  json doc{{"format", "codemix-checkpoint"},
           {"version", 1},
           {"config", config_to_json(ck.config)},
           {"step", ck.step},
           {"parameters", tensors_to_json(ck.params)},
           {"metadata", ck.metadata}};
  if (ck.optimizer) {
    doc["optimizer"] = {{"step", ck.optimizer->step},
                        {"first_moment", tensors_to_json(ck.optimizer->first_moment)},
                        {"second_moment", tensors_to_json(ck.optimizer->second_moment)}};
  }
  if (ck.vocabulary) doc["vocabulary"] = ck.vocabulary->tokens();
  return doc.dump();
}

Checkpoint checkpoint_from_string(const std::string& text) {
  const auto doc = json::parse(text);
  if (doc.value("format", "") != "codemix-checkpoint") throw std::runtime_error("not a codemix checkpoint");
  Checkpoint ck;
  ck.config = config_from_json(doc.at("config"));
  ck.step = doc.at("step").get<std::size_t>();
  ck.params = tensors_from_json(doc.at("parameters"));
  ck.metadata = doc.at("metadata").get<std::map<std::string, std::string>>();
  if (doc.contains("optimizer")) {
    const auto& o = doc.at("optimizer");
    ck.optimizer = AdamState{tensors_from_json(o.at("first_moment")), tensors_from_json(o.at("second_moment")),
                             o.at("step").get<std::size_t>()};
  }
  if (doc.contains("vocabulary")) ck.vocabulary = Vocabulary(doc.at("vocabulary").get<std::vector<std::string>>());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_string(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace codemix
