#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dflora/backbone/model.hpp"
#include "dflora/common.hpp"
#include "dflora/optim/benchmark.hpp"
#include "dflora/orchestrator/run.hpp"
#include "dflora/orchestrator/synth.hpp"
#include "dflora/subspace/projection.hpp"
#include "dflora/task/corpus.hpp"
#include "dflora/task/dataset.hpp"

namespace dflora::cli {

using nlohmann::json;

enum class TaskSource { synthetic, corpus };

struct TaskSettings {
  TaskSource source = TaskSource::synthetic;
  std::string corpus;  // TSV path when source == corpus
  task::Schema schema = task::Schema::single_sentence;
  int num_classes = 2;  // 0 infers the count from the corpus
  int per_class = 16;
  std::vector<std::string> pattern{"text", "It", "was", "<mask>", "."};
  std::map<int, std::string> verbalizer{{0, "bad"}, {1, "great"}};
  int max_len = 64;
  task::LossKind loss = task::LossKind::cross_entropy;
  bool f1 = false;
  std::uint64_t seed = 0;
  // Synthetic generator knobs.
  double difficulty = 0.3;
  double baseline_ceiling = 0.55;
};

// Fully resolved experiment description; what config.json snapshots.
struct ExperimentConfig {
  backbone::ModelConfig model;
  TaskSettings task;
  orchestrator::RunConfig run;
  std::string run_id;
};

struct BenchSpec {
  optim::OptimizerKind optimizer = optim::OptimizerKind::cma;
  optim::ObjectiveKind objective = optim::ObjectiveKind::sphere;
  int dim = 10;
  std::int64_t evals = 5000;
  int seeds = 5;
  int population = 0;  // 0 picks the optimizer default

  void validate() const {
    require(dim >= 1, "bench: dim must be positive, got ", dim);
    require(evals >= 1, "bench: evals must be positive, got ", evals);
    require(seeds >= 1, "bench: seeds must be positive, got ", seeds);
    require(population >= 0, "bench: population must be non-negative");
    optim::BenchmarkObjective(objective, dim);
  }
};

namespace detail {

inline ExperimentConfig defaults() {
  ExperimentConfig c;
  c.model.hidden = 32;
  c.model.heads = 2;
  return c;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json targets = json::array();
  for (auto t : c.run.subspace.targets) targets.push_back(backbone::to_string(t));
  json verbalizer = json::object();
  for (const auto& [k, v] : c.task.verbalizer) verbalizer[std::to_string(k)] = v;
  return {
      {"model",
       {{"layers", c.model.layers},
        {"hidden", c.model.hidden},
        {"attn_dim", c.model.attn_dim},
        {"heads", c.model.heads},
        {"ffn", c.model.ffn},
        {"seed", c.model.seed}}},
      {"task",
       {{"source", c.task.source == TaskSource::synthetic ? "synthetic" : "corpus"},
        {"corpus", c.task.corpus},
        {"schema", task::to_string(c.task.schema)},
        {"num_classes", c.task.num_classes},
        {"per_class", c.task.per_class},
        {"pattern", c.task.pattern},
        {"verbalizer", verbalizer},
        {"max_len", c.task.max_len},
        {"loss", task::to_string(c.task.loss)},
        {"f1", c.task.f1},
        {"seed", c.task.seed},
        {"difficulty", c.task.difficulty},
        {"baseline_ceiling", c.task.baseline_ceiling}}},
      {"subspace",
       {{"d", c.run.subspace.d},
        {"rank", c.run.subspace.rank},
        {"targets", targets},
        {"init", subspace::to_string(c.run.subspace.init)},
        {"alpha", c.run.subspace.alpha},
        {"sigma_z", c.run.subspace.sigma_z},
        {"seed", c.run.subspace.seed}}},
      {"optimizer",
       {{"method", orchestrator::to_string(c.run.method)},
        {"population", c.run.population},
        {"fwa_sparks", c.run.fwa_sparks},
        {"fwa_bound", c.run.fwa_bound},
        {"fwa_amplitude", c.run.fwa_amplitude},
        {"seed", c.run.optimizer_seed}}},
      {"run",
       {{"id", c.run_id},
        {"budget", c.run.budget},
        {"layer_order", orchestrator::to_string(c.run.layer_order)},
        {"patience", c.run.patience},
        {"threads", c.run.threads}}},
  };
}

namespace detail {

// Typed read of j[section][key] with the dotted key in any error.
template <typename T>
T get(const json& j, const char* section, const char* key) {
  const json& v = j.at(section).at(key);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    fail("config: ", section, ".", key, " has the wrong type (", v.dump(), ")");
  }
}

// Rejects keys the defaults do not know about, so typos never pass silently.
inline void check_known(const json& user, const json& reference, const std::string& prefix) {
  require(user.is_object(), "config: '", prefix.empty() ? "<root>" : prefix, "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    require(reference.contains(key), "config: unknown key '", path, "'");
    if (reference.at(key).is_object() && !reference.at(key).empty()) {
      check_known(value, reference.at(key), path);
    }
  }
}

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace detail

inline ExperimentConfig from_json(const json& j) {
  using detail::get;
  ExperimentConfig c;
  c.model.layers = get<int>(j, "model", "layers");
  c.model.hidden = get<int>(j, "model", "hidden");
  c.model.attn_dim = get<int>(j, "model", "attn_dim");
  c.model.heads = get<int>(j, "model", "heads");
  c.model.ffn = get<int>(j, "model", "ffn");
  c.model.seed = get<std::uint64_t>(j, "model", "seed");

  const auto source = get<std::string>(j, "task", "source");
  require(source == "synthetic" || source == "corpus", "config: task.source must be synthetic or corpus, got '",
          source, "'");
  c.task.source = source == "synthetic" ? TaskSource::synthetic : TaskSource::corpus;
  c.task.corpus = get<std::string>(j, "task", "corpus");
  c.task.schema = task::parse_schema(get<std::string>(j, "task", "schema"));
  c.task.num_classes = get<int>(j, "task", "num_classes");
  c.task.per_class = get<int>(j, "task", "per_class");
  c.task.pattern = get<std::vector<std::string>>(j, "task", "pattern");
  c.task.verbalizer.clear();
  for (const auto& [k, v] : get<std::map<std::string, std::string>>(j, "task", "verbalizer")) {
    int label = 0;
    require(task::detail::parse_label(k, label), "config: verbalizer key '", k, "' is not a class id");
    c.task.verbalizer[label] = v;
  }
  c.task.max_len = get<int>(j, "task", "max_len");
  c.task.loss = task::parse_loss(get<std::string>(j, "task", "loss"));
  c.task.f1 = get<bool>(j, "task", "f1");
  c.task.seed = get<std::uint64_t>(j, "task", "seed");
  c.task.difficulty = get<double>(j, "task", "difficulty");
  c.task.baseline_ceiling = get<double>(j, "task", "baseline_ceiling");

  auto& s = c.run.subspace;
  s.d = get<int>(j, "subspace", "d");
  s.rank = get<int>(j, "subspace", "rank");
  s.targets.clear();
  for (const auto& t : get<std::vector<std::string>>(j, "subspace", "targets")) {
    s.targets.push_back(backbone::parse_target(t));
  }
  s.init = subspace::parse_init_mode(get<std::string>(j, "subspace", "init"));
  s.alpha = get<double>(j, "subspace", "alpha");
  s.sigma_z = get<double>(j, "subspace", "sigma_z");
  s.seed = get<std::uint64_t>(j, "subspace", "seed");

  c.run.method = orchestrator::parse_method(get<std::string>(j, "optimizer", "method"));
  c.run.population = get<int>(j, "optimizer", "population");
  c.run.fwa_sparks = get<int>(j, "optimizer", "fwa_sparks");
  c.run.fwa_bound = get<double>(j, "optimizer", "fwa_bound");
  c.run.fwa_amplitude = get<double>(j, "optimizer", "fwa_amplitude");
  c.run.optimizer_seed = get<std::uint64_t>(j, "optimizer", "seed");

  c.run_id = get<std::string>(j, "run", "id");
  c.run.budget = get<std::int64_t>(j, "run", "budget");
  c.run.layer_order = orchestrator::parse_layer_order(get<std::string>(j, "run", "layer_order"));
  c.run.patience = get<std::int64_t>(j, "run", "patience");
  c.run.threads = get<int>(j, "run", "threads");

  require(c.task.per_class >= 1, "config: task.per_class must be positive");
  require(c.task.num_classes >= 0, "config: task.num_classes must be non-negative");
  require(c.task.max_len >= 1, "config: task.max_len must be positive");
  require(c.task.source == TaskSource::synthetic || !c.task.corpus.empty(),
          "config: task.corpus is required when task.source is corpus");
  c.run.subspace.validate();
  return c;
}

// Resolves a dotted key ("optimizer.population") or a bare leaf name that
// occurs in exactly one section ("population"). "pop" is accepted as an alias.
inline std::string resolve_key(const json& reference, std::string key) {
  if (key == "pop") key = "population";
  if (key.find('.') != std::string::npos) {
    const auto dot = key.find('.');
    const auto section = key.substr(0, dot), leaf = key.substr(dot + 1);
    require(reference.contains(section) && reference.at(section).contains(leaf),
            "override: unknown key '", key, "'");
    return key;
  }
  std::vector<std::string> hits;
  for (const auto& [section, body] : reference.items()) {
    if (body.contains(key)) hits.push_back(section + "." + key);
  }
  require(!hits.empty(), "override: unknown key '", key, "'");
  require(hits.size() == 1, "override: '", key, "' is ambiguous, use ", hits[0], " or ", hits[1]);
  return hits[0];
}

// Applies key=value overrides to a config document.
inline void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  const json reference = to_json(detail::defaults());
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, "override '", o, "' is not key=value");
    const auto key = resolve_key(reference, o.substr(0, eq));
    const auto dot = key.find('.');
    json value = detail::parse_scalar(o.substr(eq + 1));
    // Bare words for list-valued keys, e.g. targets=Q,K,V.
    if (reference.at(key.substr(0, dot)).at(key.substr(dot + 1)).is_array() && value.is_string()) {
      json list = json::array();
      std::stringstream ss(value.get<std::string>());
      for (std::string item; std::getline(ss, item, ',');) list.push_back(detail::parse_scalar(item));
      value = list;
    }
    doc[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
}

inline std::string default_run_id(const ExperimentConfig& c) {
  const auto& s = c.run.subspace;
  return concat(orchestrator::to_string(c.run.method), "-d", s.d, "-r", s.rank, "-",
                subspace::to_string(s.init), "-p", c.run.population, "-s", c.run.optimizer_seed);
}

// Parses a document (file contents merged over defaults, then overrides).
// A missing run.id is filled deterministically.
inline ExperimentConfig resolve_config(const json& user, const std::vector<std::string>& overrides = {}) {
  json doc = to_json(detail::defaults());
  detail::check_known(user, doc, "");
  for (const auto& [section, body] : user.items()) {
    for (const auto& [key, value] : body.items()) doc[section][key] = value;
  }
  apply_overrides(doc, overrides);
  auto c = from_json(doc);
  if (c.run_id.empty()) c.run_id = default_run_id(c);
  return c;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument(concat("cannot open config file '", path, "'"));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(concat("config file '", path, "': ", e.what()));
  }
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  auto c = resolve_config(read_json_file(path), overrides);
  // Corpus paths are taken relative to the config file when that resolves.
  if (c.task.source == TaskSource::corpus && std::filesystem::path(c.task.corpus).is_relative()) {
    const auto beside = std::filesystem::path(path).parent_path() / c.task.corpus;
    if (!std::filesystem::exists(c.task.corpus) && std::filesystem::exists(beside)) {
      c.task.corpus = beside.string();
    }
  }
  return c;
}

inline BenchSpec bench_from_json(const json& j) {
  BenchSpec b;
  const json ref = {{"optimizer", "cma"}, {"objective", "sphere"}, {"dim", 0},
                    {"evals", 0},         {"seeds", 0},           {"population", 0}};
  detail::check_known(j, ref, "bench");
  if (j.contains("optimizer")) b.optimizer = optim::parse_optimizer(j["optimizer"].get<std::string>());
  if (j.contains("objective")) b.objective = optim::parse_objective(j["objective"].get<std::string>());
  if (j.contains("dim")) b.dim = j["dim"].get<int>();
  if (j.contains("evals")) b.evals = j["evals"].get<std::int64_t>();
  if (j.contains("seeds")) b.seeds = j["seeds"].get<int>();
  if (j.contains("population")) b.population = j["population"].get<int>();
  return b;
}

// The frozen model and rendered task an experiment runs against.
struct Experiment {
  backbone::FrozenModel model;
  task::PromptTask task;
  std::optional<double> readout_bias;  // synthetic only
};

inline Experiment build_experiment(const ExperimentConfig& c) {
  if (c.task.source == TaskSource::synthetic) {
    orchestrator::SynthOptions so;
    so.num_classes = c.task.num_classes == 0 ? 2 : c.task.num_classes;
    so.per_class = c.task.per_class;
    so.difficulty = c.task.difficulty;
    so.baseline_ceiling = c.task.baseline_ceiling;
    so.seed = c.task.seed;
    so.layers = c.model.layers;
    so.hidden = c.model.hidden;
    so.heads = c.model.heads;
    so.model_seed = c.model.seed;
    auto st = orchestrator::synth_task(so);
    return {std::move(st.model), std::move(st.task), st.readout_bias};
  }
  auto corpus = task::load_corpus(c.task.corpus, c.task.schema, c.task.num_classes);
  const int classes = c.task.num_classes > 0 ? c.task.num_classes : task::count_classes(corpus);
  const auto split = task::sample_few_shot(corpus, c.task.per_class, classes, c.task.seed);
  auto prompt = task::build_prompt_task(split, c.task.pattern, c.task.verbalizer, c.task.schema,
                                        c.task.max_len, c.task.loss, c.task.f1);
  backbone::ModelConfig mc = c.model;
  mc.vocab = prompt.vocab.size();
  mc.max_seq_len = c.task.max_len;
  mc.mask_token = task::kMaskId;
  return {backbone::build_model(mc), std::move(prompt), std::nullopt};
}

}  // namespace dflora::cli
