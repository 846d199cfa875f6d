#include "hiervis/layers.hpp"

#include <cmath>

namespace hiervis {

float uniform01(Rng& rng) {
  // 24 high bits -> [0, 1)
  return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

void init_uniform(Mat& m, float bound, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (2.0f * uniform01(rng) - 1.0f) * bound;
}

void init_fan_in(Mat& m, int fan_in, Rng& rng) { init_uniform(m, 1.0f / std::sqrt(static_cast<float>(fan_in)), rng); }

void init_xavier(Mat& m, int fan_in, int fan_out, Rng& rng) {
  init_uniform(m, std::sqrt(6.0f / static_cast<float>(fan_in + fan_out)), rng);
}

Mat elu(const Mat& x, float alpha) {
  return x.unaryExpr([alpha](Real v) { return v > 0 ? v : alpha * std::expm1(v); });
}

void elu_backward_inplace(Mat& grad, const Mat& out, float alpha) {
  grad = grad.binaryExpr(out, [alpha](Real g, Real y) { return y > 0 ? g : g * (y + alpha); });
}

Mat batchnorm_forward(const Mat& x, const Param& gamma, const Param& beta, const Buffer& running_mean,
                      const Buffer& running_var, float eps, Mode mode, BatchNormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  RowVec mean(c);
  RowVec var(c);
  if (mode == Mode::train) {
    for (Eigen::Index j = 0; j < c; ++j) {
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) s += x(i, j);
      const double mu = s / static_cast<double>(n);
      double ss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dv = x(i, j) - mu;
        ss += dv * dv;
      }
      mean(j) = static_cast<Real>(mu);
      var(j) = static_cast<Real>(ss / static_cast<double>(n));
    }
  } else {
    mean = running_mean.value.row(0);
    var = running_var.value.row(0);
  }
  RowVec inv_std = (var.array() + eps).rsqrt().matrix();
  Mat xhat = (x.rowwise() - mean).array().rowwise() * inv_std.array();
  Mat y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->count = n;
    cache->mode = mode;
  }
  return y;
}

Mat batchnorm_backward(const Mat& dy, Param& gamma, Param& beta, const BatchNormCache& cache) {
  const auto n = static_cast<Real>(dy.rows());
  const RowVec sum_dy = dy.colwise().sum();
  const RowVec sum_dy_xhat = (dy.array() * cache.xhat.array()).colwise().sum();
  gamma.grad.row(0) += sum_dy_xhat;
  beta.grad.row(0) += sum_dy;

  const RowVec g = gamma.value.row(0);
  if (cache.mode == Mode::eval) {
    return dy.array().rowwise() * (g.array() * cache.inv_std.array());
  }
  // dx = gamma * inv_std / n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
  Mat dx = (dy * n).rowwise() - sum_dy;
  dx.array() -= cache.xhat.array().rowwise() * sum_dy_xhat.array();
  const RowVec scale = (g.array() * cache.inv_std.array() / n).matrix();
  dx.array().rowwise() *= scale.array();
  return dx;
}

void batchnorm_update_running(Buffer& running_mean, Buffer& running_var, const BatchNormCache& cache, float momentum) {
  if (cache.mode != Mode::train) return;
  const auto n = static_cast<Real>(cache.count);
  const Real unbias = n > 1 ? n / (n - 1) : Real(1);
  running_mean.value.row(0) = (1 - momentum) * running_mean.value.row(0) + momentum * cache.batch_mean;
  running_var.value.row(0) = (1 - momentum) * running_var.value.row(0) + momentum * unbias * cache.batch_var;
}

Mat layernorm_forward(const Mat& x, const Param& gamma, const Param& beta, float eps, LayerNormCache* cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  Mat xhat(n, m);
  ColVec inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) s += x(i, j);
    const double mu = s / static_cast<double>(m);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double dv = x(i, j) - mu;
      ss += dv * dv;
    }
    const double is = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
    inv_std(i) = static_cast<Real>(is);
    for (Eigen::Index j = 0; j < m; ++j) xhat(i, j) = static_cast<Real>((x(i, j) - mu) * is);
  }
  Mat y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Mat layernorm_backward(const Mat& dy, Param& gamma, Param& beta, const LayerNormCache& cache) {
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  const auto m = static_cast<Real>(dy.cols());
  Mat dxhat = dy.array().rowwise() * gamma.value.row(0).array();
  const ColVec mean_d = dxhat.rowwise().sum() / m;
  const ColVec mean_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix() / m;
  Mat dx = dxhat.colwise() - mean_d;
  dx.array() -= cache.xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= cache.inv_std.array();
  return dx;
}

Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, float rate, Rng& rng) {
  if (rate <= 0.0f) return {};
  Mat mask(rows, cols);
  const float keep_scale = rate < 1.0f ? 1.0f / (1.0f - rate) : 0.0f;
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) >= rate ? keep_scale : 0.0f;
  return mask;
}

}  // namespace hiervis
