#pragma once

#include "hiervis/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hiervis {

inline constexpr int kDefaultChannels = 63;
inline constexpr int kDefaultTimepoints = 100;
inline constexpr int kDefaultSamplingRateHz = 100;
inline constexpr int kSubjectDependentValTrials = 740;
inline constexpr int kLosoValTrials = 6660;

// Epoched EEG for one subject: data is [n_trials x n_channels x n_times], row-major.
struct EEGTrialArray {
  std::vector<float> data;
  int n_trials = 0;
  int n_channels = 0;
  int n_times = 0;
  int sampling_rate_hz = kDefaultSamplingRateHz;
  std::vector<std::string> channel_labels;
  std::vector<int> concept_ids;
  std::vector<int> image_ids;
  std::vector<int> repeat_index;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t trial_size() const { return static_cast<std::size_t>(n_channels) * n_times; }
  const float* trial(int i) const { return data.data() + trial_size() * i; }
  float* trial(int i) { return data.data() + trial_size() * i; }

  // Throws Error(format) naming the first offending trial on any violated invariant.
  void validate() const;
};

enum class Split { train, test };

std::string_view to_string(Split s);

inline const std::vector<std::string>& category_order() {
  static const std::vector<std::string> order = {"Animal", "Food", "Vehicle", "Tool", "Sports", "Other"};
  return order;
}

struct ConceptEntry {
  int concept_id = 0;
  Split split = Split::train;
  std::vector<int> image_ids;
  std::string class_label = "Other";
};

struct StimulusCatalog {
  std::vector<ConceptEntry> concepts;

  void validate() const;
  const ConceptEntry& entry(int concept_id) const;
  std::vector<int> concept_ids(Split s) const;
  int n_images() const;

  nlohmann::json to_json() const;
  static StimulusCatalog from_json(const nlohmann::json& j);
};

// Directory convention:
//   <root>/catalog.json
//   <root>/embeddings.tensor                      [n_images x 3 x d], row = image id
//   <root>/sub-XX/{train,test}/eeg.tensor         [N x C x T]
//   <root>/sub-XX/{train,test}/trials.json        per-trial metadata
struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path catalog() const { return root / "catalog.json"; }
  std::filesystem::path embeddings() const { return root / "embeddings.tensor"; }
  std::filesystem::path split_dir(const std::string& subject, Split s) const {
    return root / subject / std::string(to_string(s));
  }
  std::vector<std::string> subjects() const;
};

EEGTrialArray load_eeg(const std::filesystem::path& split_dir);
EEGTrialArray load_eeg(const DatasetLayout& layout, const std::string& subject, Split s);
void save_eeg(const std::filesystem::path& split_dir, const EEGTrialArray& eeg);

StimulusCatalog load_catalog(const std::filesystem::path& path);
void save_catalog(const std::filesystem::path& path, const StimulusCatalog& catalog);

// One trial per (concept_id, image_id) group, in order of first appearance.
EEGTrialArray average_repeats(const EEGTrialArray& eeg);

EEGTrialArray select_trials(const EEGTrialArray& eeg, std::span<const int> indices);
EEGTrialArray concat_trials(std::span<const EEGTrialArray> parts);
EEGTrialArray select_split(const EEGTrialArray& eeg, const StimulusCatalog& catalog, Split s);

struct TrainValSplit {
  EEGTrialArray train;
  EEGTrialArray val;
  std::vector<int> train_indices;
  std::vector<int> val_indices;
};

TrainValSplit split_validation(const EEGTrialArray& eeg, int n_val, std::uint64_t seed);

struct LosoFold {
  std::vector<int> train_subjects;
  int held_out = 0;
};

std::vector<LosoFold> loso_folds(int n_subjects);

template <typename T>
std::vector<LosoFold> loso_folds(std::span<const T> subject_arrays) {
  return loso_folds(static_cast<int>(subject_arrays.size()));
}

struct SyntheticSpec {
  int n_concepts = 50;
  int n_test_concepts = 10;
  int n_images_per_concept = 5;  // training concepts; test concepts carry one image
  int n_repeats = 2;
  int n_test_repeats = 4;
  int channels = kDefaultChannels;
  int timepoints = kDefaultTimepoints;
  int sampling_rate_hz = kDefaultSamplingRateHz;
  int embed_dim = 1024;
  double snr_db = 0.0;  // +inf disables noise
  int latent_contour = 4;
  int latent_object = 4;
  int latent_context = 4;
  double image_jitter = 0.3;
  int n_subjects = 1;
  double subject_variability = 0.3;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct SyntheticDataset {
  std::vector<EEGTrialArray> subjects;  // raw repeats, both splits
  Mat embeddings;                       // [n_images x 3d], segments ordered b, f, r
  StimulusCatalog catalog;
  SyntheticSpec spec;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);
void save_dataset(const DatasetLayout& layout, const SyntheticDataset& ds);

std::string subject_name(int index);

Mat load_embeddings(const DatasetLayout& layout, int* embed_dim = nullptr);

}  // namespace hiervis
