#include "hiervis/encoder.hpp"

#include <cmath>

namespace hiervis {

int stconv_token_count(int timepoints, int temporal_kernel, int temporal_stride, int pool_kernel, int pool_stride) {
  if (timepoints < 1 || temporal_kernel < 1 || temporal_stride < 1 || pool_kernel < 1 || pool_stride < 1) {
    throw Error(ErrorKind::shape, "stconv: sizes and strides must be positive");
  }
  if (temporal_kernel > timepoints) {
    throw Error(ErrorKind::shape, "stconv temporal convolution: kernel " + std::to_string(temporal_kernel) +
                                      " exceeds " + std::to_string(timepoints) + " timepoints");
  }
  const int conv = (timepoints - temporal_kernel) / temporal_stride + 1;
  if (pool_kernel > conv) {
    throw Error(ErrorKind::shape, "stconv average pooling: kernel " + std::to_string(pool_kernel) +
                                      " exceeds convolution output width " + std::to_string(conv));
  }
  return (conv - pool_kernel) / pool_stride + 1;
}

void STConvParams::validate() const {
  if (channels < 1 || n_filters < 1 || proj_dim < 1) {
    throw Error(ErrorKind::invalid_argument, "stconv: channels, n_filters and proj_dim must be positive");
  }
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw Error(ErrorKind::invalid_argument, "stconv: dropout outside [0, 1)");
  (void)token_count();
}

int STConvParams::conv_width() const {
  (void)stconv_token_count(timepoints, temporal_kernel, temporal_stride, 1, 1);
  return (timepoints - temporal_kernel) / temporal_stride + 1;
}

int STConvParams::token_count() const {
  if (pool_mode == PoolMode::single) {
    return stconv_token_count(timepoints, temporal_kernel, temporal_stride, pool_kernel, pool_stride);
  }
  const int first = stconv_token_count(timepoints, temporal_kernel, temporal_stride, pool_kernel, 1);
  if (pool_stride > first) {
    throw Error(ErrorKind::shape, "stconv second average pooling: kernel " + std::to_string(pool_stride) +
                                      " exceeds first pooling output width " + std::to_string(first));
  }
  return (first - pool_stride) / pool_stride + 1;
}

namespace {

Mat averaging_matrix(int in_width, int kernel, int stride) {
  const int out = (in_width - kernel) / stride + 1;
  Mat a = Mat::Zero(out, in_width);
  for (int l = 0; l < out; ++l) a.block(l, l * stride, 1, kernel).setConstant(Real(1) / static_cast<Real>(kernel));
  return a;
}

}  // namespace

Mat pool_matrix(const STConvParams& p) {
  const int width = p.conv_width();
  if (p.pool_mode == PoolMode::single) return averaging_matrix(width, p.pool_kernel, p.pool_stride);
  Mat first = averaging_matrix(width, p.pool_kernel, 1);
  Mat second = averaging_matrix(static_cast<int>(first.rows()), p.pool_stride, p.pool_stride);
  return second * first;
}

Mat pooled_windows(const float* trial, const STConvParams& p) {
  const Mat pool = pool_matrix(p);
  const int L = static_cast<int>(pool.rows());
  const int C = p.channels;
  const int K = p.temporal_kernel;
  Mat out(static_cast<Eigen::Index>(L) * C, K);
  std::vector<double> acc(K);
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < C; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const float* row = trial + static_cast<std::size_t>(c) * p.timepoints;
      for (Eigen::Index t = 0; t < pool.cols(); ++t) {
        const double w = pool(l, t);
        if (w == 0.0) continue;
        const float* src = row + t * p.temporal_stride;
        for (int k = 0; k < K; ++k) acc[k] += w * src[k];
      }
      for (int k = 0; k < K; ++k) out(static_cast<Eigen::Index>(l) * C + c, k) = static_cast<Real>(acc[k]);
    }
  }
  return out;
}

Mat WindowedTrials::gather(std::span<const int> indices) const {
  Mat out(static_cast<Eigen::Index>(indices.size()) * rows_per_trial, rows.cols());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.middleRows(static_cast<Eigen::Index>(j) * rows_per_trial, rows_per_trial) =
        rows.middleRows(static_cast<Eigen::Index>(indices[j]) * rows_per_trial, rows_per_trial);
  }
  return out;
}

WindowedTrials window_trials(const EEGTrialArray& eeg, const STConvParams& p) {
  if (eeg.n_channels != p.channels || eeg.n_times != p.timepoints) {
    throw Error(ErrorKind::shape, "EEG is " + std::to_string(eeg.n_channels) + "x" + std::to_string(eeg.n_times) +
                                      " but the encoder expects " + std::to_string(p.channels) + "x" +
                                      std::to_string(p.timepoints));
  }
  WindowedTrials w;
  w.n_trials = eeg.n_trials;
  w.rows_per_trial = p.token_count() * p.channels;
  w.rows.resize(static_cast<Eigen::Index>(w.n_trials) * w.rows_per_trial, p.temporal_kernel);
  for (int i = 0; i < eeg.n_trials; ++i) {
    w.rows.middleRows(static_cast<Eigen::Index>(i) * w.rows_per_trial, w.rows_per_trial) = pooled_windows(eeg.trial(i), p);
  }
  return w;
}

StconvStream::StconvStream(const STConvParams& p, const std::string& prefix) : p_(p) {
  p.validate();
  const int F = p.n_filters;
  temporal = Param(prefix + ".temporal_conv.weight", F, p.temporal_kernel);
  bn1_gamma = Param(prefix + ".bn1.weight", 1, F);
  bn1_beta = Param(prefix + ".bn1.bias", 1, F);
  spatial = Param(prefix + ".spatial_conv.weight", F, static_cast<Eigen::Index>(p.channels) * F);
  bn2_gamma = Param(prefix + ".bn2.weight", 1, F);
  bn2_beta = Param(prefix + ".bn2.bias", 1, F);
  proj_w = Param(prefix + ".proj.weight", p.proj_dim, F);
  proj_b = Param(prefix + ".proj.bias", 1, p.proj_dim);
  bn1_gamma.value.setOnes();
  bn2_gamma.value.setOnes();
  bn1_mean = {prefix + ".bn1.running_mean", Mat::Zero(1, F)};
  bn1_var = {prefix + ".bn1.running_var", Mat::Ones(1, F)};
  bn2_mean = {prefix + ".bn2.running_mean", Mat::Zero(1, F)};
  bn2_var = {prefix + ".bn2.running_var", Mat::Ones(1, F)};
}

void StconvStream::init(Rng& rng) {
  init_fan_in(temporal.value, p_.temporal_kernel, rng);
  init_fan_in(spatial.value, p_.channels * p_.n_filters, rng);
  init_fan_in(proj_w.value, p_.n_filters, rng);
  init_fan_in(proj_b.value, p_.n_filters, rng);
}

Mat StconvStream::forward(const Mat& windows, int batch, Mode mode, Rng* rng, StconvCache* cache) const {
  const int L = p_.token_count();
  const int C = p_.channels;
  const int F = p_.n_filters;
  const Eigen::Index rows = static_cast<Eigen::Index>(batch) * L;
  if (windows.rows() != rows * C || windows.cols() != p_.temporal_kernel) {
    throw Error(ErrorKind::shape, "stconv: window matrix does not match batch/params");
  }

  Mat z1;
  z1.noalias() = windows * temporal.value.transpose();
  BatchNormCache bn1;
  Mat act1 = elu(batchnorm_forward(z1, bn1_gamma, bn1_beta, bn1_mean, bn1_var, p_.bn_eps, mode, &bn1), p_.elu_alpha);

  ConstMatMap act1_rows(act1.data(), rows, static_cast<Eigen::Index>(C) * F);
  Mat z2;
  z2.noalias() = act1_rows * spatial.value.transpose();
  BatchNormCache bn2;
  Mat act2 = elu(batchnorm_forward(z2, bn2_gamma, bn2_beta, bn2_mean, bn2_var, p_.bn_eps, mode, &bn2), p_.elu_alpha);

  Mat tokens;
  tokens.noalias() = act2 * proj_w.value.transpose();
  tokens.rowwise() += proj_b.value.row(0);

  Mat drop;
  if (mode == Mode::train && p_.dropout > 0.0f) {
    if (!rng) throw Error(ErrorKind::invalid_argument, "stconv: train-mode dropout needs an rng");
    drop = dropout_mask(tokens.rows(), tokens.cols(), p_.dropout, *rng);
    tokens.array() *= drop.array();
  }
  if (!tokens.allFinite()) throw Error(ErrorKind::numeric, "stconv: non-finite activation");

  if (cache) {
    cache->windows = &windows;
    cache->batch = batch;
    cache->bn1 = std::move(bn1);
    cache->bn2 = std::move(bn2);
    cache->act1 = std::move(act1);
    cache->act2 = std::move(act2);
    cache->drop = std::move(drop);
  }
  return tokens;
}

void StconvStream::backward(const StconvCache& cache, const Mat& d_tokens) {
  const int L = p_.token_count();
  const int C = p_.channels;
  const int F = p_.n_filters;
  const Eigen::Index rows = static_cast<Eigen::Index>(cache.batch) * L;

  Mat d = d_tokens;
  if (cache.drop.size()) d.array() *= cache.drop.array();

  proj_w.grad.noalias() += d.transpose() * cache.act2;
  proj_b.grad.row(0) += d.colwise().sum();
  Mat da2;
  da2.noalias() = d * proj_w.value;
  elu_backward_inplace(da2, cache.act2, p_.elu_alpha);
  const Mat dz2 = batchnorm_backward(da2, bn2_gamma, bn2_beta, cache.bn2);

  ConstMatMap act1_rows(cache.act1.data(), rows, static_cast<Eigen::Index>(C) * F);
  spatial.grad.noalias() += dz2.transpose() * act1_rows;
  Mat da1_rows;
  da1_rows.noalias() = dz2 * spatial.value;
  Mat da1 = MatMap(da1_rows.data(), rows * C, F);
  elu_backward_inplace(da1, cache.act1, p_.elu_alpha);
  const Mat dz1 = batchnorm_backward(da1, bn1_gamma, bn1_beta, cache.bn1);

  temporal.grad.noalias() += dz1.transpose() * (*cache.windows);
}

void StconvStream::update_running_stats(const StconvCache& cache) {
  batchnorm_update_running(bn1_mean, bn1_var, cache.bn1, p_.bn_momentum);
  batchnorm_update_running(bn2_mean, bn2_var, cache.bn2, p_.bn_momentum);
}

std::vector<Param*> StconvStream::params() {
  return {&temporal, &bn1_gamma, &bn1_beta, &spatial, &bn2_gamma, &bn2_beta, &proj_w, &proj_b};
}

std::vector<const Param*> StconvStream::params() const {
  return {&temporal, &bn1_gamma, &bn1_beta, &spatial, &bn2_gamma, &bn2_beta, &proj_w, &proj_b};
}

std::vector<Buffer*> StconvStream::buffers() { return {&bn1_mean, &bn1_var, &bn2_mean, &bn2_var}; }

TriStreamEncoder::TriStreamEncoder(const STConvParams& p)
    : streams{StconvStream(p, "encoder.contour"), StconvStream(p, "encoder.object"),
              StconvStream(p, "encoder.context")} {}

void TriStreamEncoder::init(Rng& rng) {
  for (auto& s : streams) s.init(rng);
}

std::array<Mat, 3> TriStreamEncoder::forward(const Mat& windows, int batch, Mode mode, Rng* rng,
                                             std::array<StconvCache, 3>* caches) const {
  std::array<Mat, 3> out;
  for (int v = 0; v < 3; ++v) {
    out[v] = streams[v].forward(windows, batch, mode, rng, caches ? &(*caches)[v] : nullptr);
  }
  return out;
}

Mat stconv_forward(const float* eeg, const StconvStream& stream, Mode mode, Rng* rng) {
  const Mat windows = pooled_windows(eeg, stream.config());
  return stream.forward(windows, 1, mode, rng, nullptr);
}

std::array<Mat, 3> tri_encode(const float* eeg, const TriStreamEncoder& enc, Mode mode, Rng* rng) {
  const Mat windows = pooled_windows(eeg, enc.streams[0].config());
  return enc.forward(windows, 1, mode, rng, nullptr);
}

}  // namespace hiervis
