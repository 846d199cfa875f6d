#pragma once

#include "hiervis/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hiervis {

// Dense float32 tensor, row-major.
struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

std::size_t shape_numel(const std::vector<std::int64_t>& shape);

// On-disk layout:
//   u64 little-endian  header length H
//   H bytes            UTF-8 JSON {"byte_order":"LE","dtype":"f32","name":...,"shape":[...]}
//   4*numel bytes      little-endian float32 payload, row-major
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(std::string_view bytes, std::string_view origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

Tensor to_tensor(std::string name, const Mat& m);
Mat to_mat(const Tensor& t, Eigen::Index rows, Eigen::Index cols);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);

}  // namespace hiervis
