#pragma once

#include "hiervis/decomposition.hpp"
#include "hiervis/model.hpp"
#include "hiervis/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace hiervis {

enum class Protocol { subject_dependent, loso };

std::string to_string(Protocol p);
// Accepts "dep" / "subject_dependent" and "loso".
Protocol parse_protocol(const std::string& s);

struct DataConfig {
  bool average_train_repeats = true;
  int loso_val_size = kLosoValTrials;
  std::vector<std::string> subjects;  // empty: every subject in the dataset
};

struct EvalConfig {
  std::vector<int> k = {1, 3, 5};
  int top_n = 10;
  int batch_size = 256;
};

// Every field is optional in the JSON form; unknown keys are rejected. Sections:
// data, encoder, attention, objective, training, evaluation, decomposition.
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig training;
  EvalConfig evaluation;
  float mask_threshold = kDefaultMaskThreshold;

  // Set when the document pins the EEG shape or embedding width; otherwise these are
  // taken from the dataset.
  bool explicit_channels = false;
  bool explicit_timepoints = false;
  bool explicit_embed_dim = false;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace hiervis
