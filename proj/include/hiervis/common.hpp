#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hiervis {

// Compute precision. Models and files are float32; HIERVIS_REAL_DOUBLE builds the same
// code in double for numerical cross-checks.
#ifdef HIERVIS_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using ColVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;

enum class ErrorKind {
  io,
  format,
  shape,
  invalid_argument,
  numeric,
  protocol,
  provider,
  config,
};

std::string_view to_string(ErrorKind kind);

// Every failure surfaced by the library. `kind` is what the CLI reports in its
// machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

enum class Mode { train, eval };

// A learnable tensor. Vectors are stored as 1 x n matrices.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Non-learnable state saved with a model (batch-norm running statistics).
struct Buffer {
  std::string name;
  Mat value;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace hiervis
