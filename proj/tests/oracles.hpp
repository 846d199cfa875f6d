#pragma once

// Brute-force reference implementations shared by the unit and acceptance tests. They
// deliberately avoid the library's own helpers.

#include "hiervis/cahi.hpp"
#include "hiervis/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace hiervis::oracle {

// Number of start positions of a width-k window moving by `stride` over n samples.
inline int window_count(int n, int k, int stride) {
  int count = 0;
  for (int start = 0; start + k <= n; start += stride) ++count;
  return count;
}

inline int token_count(int T, int Kt, int St, int Kp, int Sp) {
  return window_count(window_count(T, Kt, St), Kp, Sp);
}

// Multi-head cross-attention with explicit loops, in double.
inline MatD cross_attention(const Mat& lower, const Mat& upper, int batch, const CrossAttention& a, int heads, int dk,
                            double scale, bool value_from_query) {
  const int m = static_cast<int>(lower.cols());
  const int Ll = static_cast<int>(lower.rows()) / batch;
  const int Lu = static_cast<int>(upper.rows()) / batch;
  MatD out = MatD::Zero(upper.rows(), m);
  for (int b = 0; b < batch; ++b) {
    std::vector<double> concat(static_cast<std::size_t>(Lu) * heads * dk, 0.0);
    for (int h = 0; h < heads; ++h) {
      for (int i = 0; i < Lu; ++i) {
        auto proj = [&](const Mat& x, int row, const Mat& w, int col) {
          double s = 0.0;
          for (int c = 0; c < m; ++c) s += double(x(row, c)) * double(w(c, col));
          return s;
        };
        std::vector<double> logits(static_cast<std::size_t>(Ll));
        for (int j = 0; j < Ll; ++j) {
          double dot = 0.0;
          for (int e = 0; e < dk; ++e) {
            dot += proj(upper, b * Lu + i, a.wq.value, h * dk + e) * proj(lower, b * Ll + j, a.wk.value, h * dk + e);
          }
          logits[static_cast<std::size_t>(j)] = dot * scale;
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (int e = 0; e < dk; ++e) {
          double acc = 0.0;
          for (int j = 0; j < Ll; ++j) {
            const Mat& src = value_from_query ? upper : lower;
            const int row = value_from_query ? b * Lu + j : b * Ll + j;
            acc += logits[static_cast<std::size_t>(j)] / z * proj(src, row, a.wv.value, h * dk + e);
          }
          concat[static_cast<std::size_t>(i) * heads * dk + h * dk + e] = acc;
        }
      }
    }
    for (int i = 0; i < Lu; ++i) {
      for (int c = 0; c < m; ++c) {
        double s = a.bo.value(0, c);
        for (int e = 0; e < heads * dk; ++e) s += concat[static_cast<std::size_t>(i) * heads * dk + e] * a.wo.value(e, c);
        out(b * Lu + i, c) = s;
      }
    }
  }
  return out;
}

// Fraction of queries whose truth is within the first k entries of the full ranking
// (descending cosine, ties broken by gallery index).
inline double topk(const Mat& q, const Mat& g, const std::vector<int>& truth, int k) {
  int hits = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<std::pair<double, int>> scored;
    auto unit = [](const Mat& m, Eigen::Index row) {
      std::vector<double> v(static_cast<std::size_t>(m.cols()));
      double n = 0.0;
      for (Eigen::Index c = 0; c < m.cols(); ++c) n += double(m(row, c)) * m(row, c);
      n = std::sqrt(n);
      for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(row, c) / n;
      return v;
    };
    const auto qi = unit(q, i);
    for (Eigen::Index j = 0; j < g.rows(); ++j) {
      const auto gj = unit(g, j);
      double dot = 0.0;
      for (std::size_t c = 0; c < qi.size(); ++c) dot += qi[c] * gj[c];
      scored.emplace_back(dot, static_cast<int>(j));
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (int r = 0; r < k && r < static_cast<int>(scored.size()); ++r) {
      if (scored[static_cast<std::size_t>(r)].second == truth[static_cast<std::size_t>(i)]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(q.rows());
}

inline std::vector<std::uint8_t> binarize(const std::vector<float>& s, float tau) {
  std::vector<std::uint8_t> out;
  for (float v : s) out.push_back(v > tau ? 1 : 0);
  return out;
}

inline std::vector<float> foreground(const std::vector<float>& raw, const std::vector<std::uint8_t>& mask, int channels) {
  std::vector<float> out(raw.size());
  for (std::size_t p = 0; p < mask.size(); ++p)
    for (int c = 0; c < channels; ++c) out[p * channels + c] = raw[p * channels + c] * float(mask[p]);
  return out;
}

// ln(1 + (N-1) e^-alpha): InfoNCE for N orthonormal aligned pairs at scale alpha.
inline double aligned_infonce(int n, double alpha) { return std::log1p((n - 1) * std::exp(-alpha)); }

}  // namespace hiervis::oracle
