#pragma once

#include "hiervis/common.hpp"
#include "hiervis/dataio.hpp"
#include "hiervis/layers.hpp"

#include <array>
#include <span>
#include <string>
#include <vector>

namespace hiervis {

// single: one average pool (K_p, stride S_p).
// two_stage: pool (K_p, stride 1) followed by pool (S_p, stride S_p).
enum class PoolMode { single, two_stage };

struct STConvParams {
  int channels = kDefaultChannels;
  int timepoints = kDefaultTimepoints;
  int temporal_kernel = 25;
  int temporal_stride = 1;
  int pool_kernel = 51;
  int pool_stride = 5;
  PoolMode pool_mode = PoolMode::single;
  int n_filters = 40;
  int proj_dim = 40;
  float dropout = 0.5f;
  float bn_eps = 1e-5f;
  float bn_momentum = 0.1f;
  float elu_alpha = 1.0f;

  void validate() const;
  int conv_width() const;
  int token_count() const;
};

// L = floor((floor((T - K_t)/S_t + 1) - K_p)/S_p + 1). Throws Error(shape) naming the stage
// that leaves no output.
int stconv_token_count(int timepoints, int temporal_kernel, int temporal_stride, int pool_kernel, int pool_stride);

// Averaging operator of the pooling stage(s) as an [L x conv_width] matrix.
Mat pool_matrix(const STConvParams& p);

// Temporal convolution and average pooling are both linear, so the pool is applied to the
// convolution's input windows once per trial:
//   window[l*C + c, k] = sum_t pool[l, t] * E[c, t*S_t + k]
// The pooled convolution is then `window * W_t^T`.
Mat pooled_windows(const float* trial, const STConvParams& p);

// Pooled windows for a set of trials, each occupying L*C consecutive rows.
struct WindowedTrials {
  Mat rows;
  int n_trials = 0;
  int rows_per_trial = 0;

  Mat gather(std::span<const int> indices) const;
};

WindowedTrials window_trials(const EEGTrialArray& eeg, const STConvParams& p);

struct StconvCache {
  const Mat* windows = nullptr;  // borrowed; must outlive backward()
  int batch = 0;
  BatchNormCache bn1;
  BatchNormCache bn2;
  Mat act1;  // [(B*L*C) x F] == [(B*L) x (C*F)]
  Mat act2;  // [(B*L) x F]
  Mat drop;  // empty when inactive
};

// One spatiotemporal convolution stream. Token output is [(B*L) x proj_dim]; rows
// b*L .. b*L+L-1 belong to sample b.
class StconvStream {
 public:
  StconvStream() = default;
  StconvStream(const STConvParams& p, const std::string& prefix);

  void init(Rng& rng);

  Mat forward(const Mat& windows, int batch, Mode mode, Rng* rng, StconvCache* cache) const;
  // Accumulates parameter gradients. Train-mode caches only.
  void backward(const StconvCache& cache, const Mat& d_tokens);
  void update_running_stats(const StconvCache& cache);

  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  std::vector<Buffer*> buffers();

  const STConvParams& config() const { return p_; }

  Param temporal;  // [F x K_t]
  Param bn1_gamma, bn1_beta;
  Param spatial;  // [F x (C*F)], column c*F + f
  Param bn2_gamma, bn2_beta;
  Param proj_w;  // [m x F]
  Param proj_b;  // [1 x m]
  Buffer bn1_mean, bn1_var, bn2_mean, bn2_var;

 private:
  STConvParams p_;
};

// Three independent streams (contour, object, context) over the same input.
struct TriStreamEncoder {
  std::array<StconvStream, 3> streams;

  TriStreamEncoder() = default;
  explicit TriStreamEncoder(const STConvParams& p);

  void init(Rng& rng);
  std::array<Mat, 3> forward(const Mat& windows, int batch, Mode mode, Rng* rng,
                             std::array<StconvCache, 3>* caches) const;
};

// Single-trial convenience: E is [C x T] row-major. Eval mode uses running statistics.
Mat stconv_forward(const float* eeg, const StconvStream& stream, Mode mode, Rng* rng = nullptr);
std::array<Mat, 3> tri_encode(const float* eeg, const TriStreamEncoder& enc, Mode mode, Rng* rng = nullptr);

}  // namespace hiervis
