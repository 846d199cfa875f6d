#pragma once

#include "hiervis/dataio.hpp"
#include "hiervis/model.hpp"

#include <random>

namespace hiervis::test {

// Small configuration for finite-difference checks.
inline ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.encoder.channels = 4;
  cfg.encoder.timepoints = 40;
  cfg.encoder.temporal_kernel = 5;
  cfg.encoder.pool_kernel = 11;
  cfg.encoder.pool_stride = 5;
  cfg.encoder.n_filters = 4;
  cfg.encoder.proj_dim = 6;
  cfg.attention.heads = 2;
  cfg.embed_dim = 8;
  return cfg;
}

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, float sd = 1.0f) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, sd);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline EEGTrialArray random_eeg(int n, int c, int t, std::uint64_t seed) {
  EEGTrialArray e;
  e.n_trials = n;
  e.n_channels = c;
  e.n_times = t;
  const Mat m = random_mat(n, c * t, seed);
  e.data.assign(m.data(), m.data() + m.size());
  for (int i = 0; i < n; ++i) {
    e.concept_ids.push_back(i);
    e.image_ids.push_back(i);
    e.repeat_index.push_back(0);
  }
  for (int i = 0; i < c; ++i) e.channel_labels.push_back("ch" + std::to_string(i));
  return e;
}

}  // namespace hiervis::test
