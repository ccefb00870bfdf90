#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "pearnet/model.hpp"
#include "pearnet/signal.hpp"
#include "pearnet/train.hpp"

namespace pearnet {

struct DatasetConfig {
  std::string path;
  FileFormat format = FileFormat::kCsv;
  bool normalize = true;
};

struct SynthSection {
  SynthSpec spec;
  std::string out_path = "dataset.csv";
  FileFormat format = FileFormat::kCsv;
};

struct AblationGrid {
  std::vector<int> segments = {2, 5, 8};
  std::vector<int> levels = {0, 2, 3};
  std::vector<std::string> attention = {"gat_ff", "cosine", "pearson"};
  std::vector<bool> vif = {false, true};

  bool empty() const {
    return segments.empty() && levels.empty() && attention.empty() && vif.empty();
  }
};

struct InspectSection {
  std::string checkpoint;
  int epoch_index = 0;
};

// The structured run configuration. Unknown keys are rejected with a key-path
// diagnostic; every value is validated against the owning module's
// preconditions before any work starts.
struct RunConfig {
  std::string tag = "run";
  std::string out_parent = "runs";
  std::uint64_t seed = 1;
  DatasetConfig dataset;
  SynthSection synth;
  ModelConfig model;  // architecture template; protocol-owned axes come from `train`
  TrainConfig train;
  AblationGrid ablation;
  InspectSection inspect;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;  // effective config, defaults materialized

  // Module-level precondition checks shared by all commands (model arithmetic,
  // optimizer ranges, synth ranges). Throws ConfigError with a key path.
  void validate_common() const;
};

}  // namespace pearnet
