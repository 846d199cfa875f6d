#pragma once

#include "hiervis/dataio.hpp"
#include "hiervis/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hiervis {

inline constexpr int kCheckpointVersion = 1;

struct TrainConfig {
  double learning_rate = 2e-3;
  int batch_size = 1000;  // clipped to the training-set size
  int max_epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int n_repeats = 5;
  int val_size = kSubjectDependentValTrials;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  LossDirection direction = LossDirection::eeg_to_img;
  ViewSet views;

  void validate() const;
};

// EEG trials paired with the embedding triplet of their stimulus.
struct PairedTrials {
  WindowedTrials windows;
  Mat targets;  // [N x 3d], rows [C_b | C_f | C_r]
  std::vector<int> concept_ids;
  std::vector<int> image_ids;

  int size() const { return windows.n_trials; }
};

PairedTrials make_pairs(const EEGTrialArray& eeg, const Mat& embeddings, const STConvParams& p);

// Adaptive-moment optimiser over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps);

  void step();
  int steps() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<MatD> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Scales all gradients so their joint L2 norm is at most max_norm; returns the norm before.
double clip_grad_norm(std::span<Param* const> params, double max_norm);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
  Model model;  // weights of the selected epoch
  int best_epoch = -1;
  double best_val_loss = 0.0;
  std::string rng_digest;  // sha256 of the shuffle RNG state after the selected epoch
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains `model` (already initialised) and keeps the epoch with the lowest validation
// loss. With an empty validation set the training loss selects instead.
TrainResult train(Model model, const PairedTrials& train_set, const PairedTrials& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// Mean loss over a set, evaluated in eval mode in batches of `batch_size`.
double evaluate_loss(Model& model, const PairedTrials& set, int batch_size, ViewSet views, LossDirection direction);

struct Checkpoint {
  Model model;
  TrainConfig train_config;
  int epoch = -1;
  double val_loss = 0.0;
  std::string rng_digest;
  nlohmann::json extra = nlohmann::json::object();
};

// <dir>/manifest.json plus one TensorFile per parameter and buffer.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string to_string(LossDirection d);
LossDirection parse_direction(const std::string& s);
std::string to_string(PoolMode m);
PoolMode parse_pool_mode(const std::string& s);
std::string to_string(KvSource k);
KvSource parse_kv_source(const std::string& s);

}  // namespace hiervis
