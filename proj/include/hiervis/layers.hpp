#pragma once

#include "hiervis/common.hpp"

#include <random>

namespace hiervis {

using Rng = std::mt19937_64;

// Uniform(-bound, bound) fill.
void init_uniform(Mat& m, float bound, Rng& rng);
// Default initialisation for a linear or convolution weight with the given fan-in.
void init_fan_in(Mat& m, int fan_in, Rng& rng);
void init_xavier(Mat& m, int fan_in, int fan_out, Rng& rng);

float uniform01(Rng& rng);

Mat elu(const Mat& x, float alpha);
// Gradient through ELU given its output.
void elu_backward_inplace(Mat& grad, const Mat& out, float alpha);

struct BatchNormCache {
  Mat xhat;
  RowVec inv_std;
  RowVec batch_mean;
  RowVec batch_var;  // biased
  Eigen::Index count = 0;
  Mode mode = Mode::train;  // eval: running statistics, so the map is affine
};

// Normalises each column over all rows.
Mat batchnorm_forward(const Mat& x, const Param& gamma, const Param& beta, const Buffer& running_mean,
                      const Buffer& running_var, float eps, Mode mode, BatchNormCache* cache);
Mat batchnorm_backward(const Mat& dy, Param& gamma, Param& beta, const BatchNormCache& cache);
void batchnorm_update_running(Buffer& running_mean, Buffer& running_var, const BatchNormCache& cache, float momentum);

struct LayerNormCache {
  Mat xhat;
  ColVec inv_std;
};

// Normalises each row over its columns.
Mat layernorm_forward(const Mat& x, const Param& gamma, const Param& beta, float eps, LayerNormCache* cache);
Mat layernorm_backward(const Mat& dy, Param& gamma, Param& beta, const LayerNormCache& cache);

// Inverted dropout; returns the scaled keep-mask (empty when inactive).
Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, float rate, Rng& rng);

}  // namespace hiervis
