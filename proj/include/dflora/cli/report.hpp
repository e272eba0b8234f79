#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dflora/backbone/tensor_io.hpp"
#include "dflora/cli/config.hpp"
#include "dflora/orchestrator/run.hpp"

namespace dflora::cli {

inline json to_json(const orchestrator::GenerationRecord& r) {
  return {{"layer", r.layer},
          {"layer_generation", r.layer_generation},
          {"generation", r.generation},
          {"consumed", r.consumed},
          {"generation_best_loss", r.generation_best_loss},
          {"train_loss", r.train_loss},
          {"train_accuracy", r.train_accuracy},
          {"dev_accuracy", r.dev_accuracy},
          {"best_dev_accuracy", r.best_dev_accuracy}};
}

inline json to_json(const task::EvalResult& e) {
  json j = {{"loss", e.loss}, {"accuracy", e.accuracy}, {"count", e.count}, {"correct", e.correct}};
  if (e.f1) j["f1"] = *e.f1;
  return j;
}

inline json to_json(const orchestrator::SplitMetrics& m) {
  return {{"train", to_json(m.train)}, {"dev", to_json(m.dev)}, {"test", to_json(m.test)}};
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

inline std::uint64_t projection_checksum(const std::vector<subspace::LayerSubspace>& subs) {
  Fnv1a h;
  for (const auto& s : subs) {
    const auto c = s.checksum();
    h.update(&c, sizeof c);
  }
  return h.digest();
}

// Frozen-state fingerprints taken before and after a run.
struct Audit {
  std::uint64_t model_before = 0, model_after = 0;
  std::uint64_t projection_before = 0, projection_after = 0;

  bool intact() const { return model_before == model_after && projection_before == projection_after; }
};

inline json summary_json(const ExperimentConfig& c, const orchestrator::RunReport& r, const Audit& audit,
                         std::optional<double> readout_bias) {
  json j = {{"run_id", c.run_id},
            {"method", orchestrator::to_string(c.run.method)},
            {"budget", c.run.budget},
            {"consumed", r.consumed},
            {"ledger", r.ledger},
            {"generations", r.records.size()},
            {"early_stopped", r.early_stopped},
            {"reference", to_json(r.reference)},
            {"best_dev", to_json(r.best_dev)},
            {"train_best", to_json(r.final_train_best)},
            {"audit",
             {{"model_checksum_before", hex(audit.model_before)},
              {"model_checksum_after", hex(audit.model_after)},
              {"projection_checksum_before", hex(audit.projection_before)},
              {"projection_checksum_after", hex(audit.projection_after)},
              {"frozen_state_intact", audit.intact()}}},
            {"wall_seconds", r.wall_seconds}};
  if (readout_bias) j["synthetic_readout_bias"] = *readout_bias;
  return j;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(concat("cannot write '", path.string(), "'"));
  out << j.dump(2) << '\n';
}

// Model weights, projections and both selected search vectors.
inline std::vector<backbone::NamedTensor> run_tensors(const backbone::FrozenModel& model,
                                                      const std::vector<subspace::LayerSubspace>& subs,
                                                      const orchestrator::RunReport& r) {
  auto out = model.export_tensors();
  for (const auto& s : subs) {
    for (auto& t : s.export_tensors()) {
      t.name = "projection." + t.name;
      out.push_back(std::move(t));
    }
  }
  for (std::size_t l = 0; l < r.best_dev_vectors.size(); ++l) {
    out.push_back(backbone::NamedTensor::from_vector(concat("search.best_dev.layer", l), r.best_dev_vectors[l]));
  }
  for (std::size_t l = 0; l < r.train_best_vectors.size(); ++l) {
    out.push_back(backbone::NamedTensor::from_vector(concat("search.train_best.layer", l), r.train_best_vectors[l]));
  }
  return out;
}

// Streams one JSON line per generation. No wall-clock fields, so identical
// configurations give identical files.
class TraceWriter {
 public:
  explicit TraceWriter(const std::filesystem::path& path) : out_(path) {
    if (!out_) throw std::runtime_error(concat("cannot write '", path.string(), "'"));
  }

  void operator()(const orchestrator::GenerationRecord& r) {
    out_ << to_json(r).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

}  // namespace dflora::cli
