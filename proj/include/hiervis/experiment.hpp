#pragma once

#include "hiervis/config.hpp"
#include "hiervis/evaluation.hpp"
#include "hiervis/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace hiervis {

struct Dataset {
  DatasetLayout layout;
  StimulusCatalog catalog;
  Mat embeddings;  // [n_images x 3d]
  int embed_dim = 0;
  std::vector<std::string> subjects;
};

Dataset open_dataset(const std::filesystem::path& root);

// Fills the EEG shape and embedding width from the data; throws when the config pins
// values that disagree.
ModelConfig resolve_model_config(const RunConfig& cfg, const Dataset& data);

// The run config with the data-derived model fields filled in, as echoed into reports.
nlohmann::json resolved_config_json(const RunConfig& cfg, const Dataset& data);

std::vector<std::string> selected_subjects(const RunConfig& cfg, const Dataset& data);

struct EvalSet {
  PairedTrials queries;      // repeat-averaged test trials
  Mat gallery;               // [G x 3d], one image per test concept
  std::vector<int> truth;    // gallery row of each query
  std::vector<int> gallery_concepts;
  std::vector<std::string> query_labels;  // category of each query
};

struct Experiment {
  PairedTrials train;
  PairedTrials val;
  EvalSet test;
};

// Subject-dependent: the subject's own training trials (validation drawn from them).
// LOSO: every other subject's training trials; the held-out subject's test set.
Experiment prepare_experiment(const Dataset& data, const RunConfig& cfg, const ModelConfig& mcfg, Protocol protocol,
                              const std::string& subject, std::uint64_t seed);

EvalSet prepare_eval_set(const Dataset& data, const ModelConfig& mcfg, const std::string& subject);

using ViewScores = std::map<std::string, std::map<int, double>>;  // view name -> k -> accuracy

// Retrieval for BOM, FO, RS and Triple.
ViewScores evaluate_retrieval(const Model& model, const EvalSet& set, const EvalConfig& cfg);

struct RunRecord {
  std::string subject;
  std::uint64_t seed = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string rng_digest;
  ViewScores scores;
  std::vector<std::string> warnings;
};

struct RunOutput {
  RunRecord record;
  TrainResult training;
};

RunOutput run_once(const Dataset& data, const RunConfig& cfg, Protocol protocol, const std::string& subject,
                   std::uint64_t seed, const EpochCallback& on_epoch = {});

struct RetrievalReport {
  Protocol protocol = Protocol::subject_dependent;
  std::vector<std::uint64_t> seeds;
  std::vector<RunRecord> runs;
  nlohmann::json config;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

// Runs seeds cfg.training.seed + 0..n-1 for every selected subject. `threads` runs
// independent repeats concurrently; results do not depend on it.
RetrievalReport repeat_runs(const Dataset& data, const RunConfig& cfg, Protocol protocol, int n, int threads = 1);

// Mean Top-k per view over all runs.
ViewScores mean_scores(std::span<const RunRecord> runs);

struct AblationRow {
  std::string views;
  bool cross_attention = true;
  std::map<int, MeanStd> topk;
};

// Every non-empty view subset x {with, without} cross-attention; each row trains with the
// subset's loss and retrieves with the same subset.
std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& cfg, Protocol protocol, int n_seeds,
                                      int threads = 1);
nlohmann::json ablation_to_json(std::span<const AblationRow> rows, const nlohmann::json& config);
std::string ablation_to_csv(std::span<const AblationRow> rows);

struct SweepCell {
  int layers = 0;
  int heads = 0;
  std::map<int, MeanStd> topk;  // Triple retrieval
  long long parameters = 0;
};

std::vector<SweepCell> sweep_attention(const Dataset& data, const RunConfig& cfg, Protocol protocol,
                                       std::span<const int> layers, std::span<const int> heads, int n_seeds,
                                       int threads = 1);
nlohmann::json sweep_to_json(std::span<const SweepCell> cells, const nlohmann::json& config);
std::string sweep_to_csv(std::span<const SweepCell> cells);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

}  // namespace hiervis
