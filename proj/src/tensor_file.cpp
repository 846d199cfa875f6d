#include "hiervis/tensor_file.hpp"

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hiervis {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::shape: return "shape";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::provider: return "provider";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

namespace {

static_assert(sizeof(float) == 4);

std::uint32_t bswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

}  // namespace

std::size_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) {
    if (s < 0) throw Error(ErrorKind::format, "negative dimension in tensor shape");
    n *= static_cast<std::size_t>(s);
  }
  return n;
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

std::string encode_tensor(const Tensor& t) {
  if (t.numel() != t.data.size()) {
    throw Error(ErrorKind::shape, "tensor '" + t.name + "': data size " + std::to_string(t.data.size()) +
                                      " does not match shape product " + std::to_string(t.numel()));
  }
  nlohmann::json header = {{"shape", t.shape}, {"dtype", "f32"}, {"byte_order", "LE"}, {"name", t.name}};
  const std::string h = header.dump();

  std::string out;
  out.reserve(8 + h.size() + 4 * t.data.size());
  put_u64_le(out, h.size());
  out += h;
  const std::size_t off = out.size();
  out.resize(off + 4 * t.data.size());
  std::memcpy(out.data() + off, t.data.data(), 4 * t.data.size());
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      std::uint32_t w;
      std::memcpy(&w, out.data() + off + 4 * i, 4);
      w = bswap32(w);
      std::memcpy(out.data() + off + 4 * i, &w, 4);
    }
  }
  return out;
}

Tensor decode_tensor(std::string_view bytes, std::string_view origin) {
  const std::string where(origin);
  if (bytes.size() < 8) throw Error(ErrorKind::format, where + ": truncated tensor header");
  const std::uint64_t hlen = get_u64_le(bytes);
  if (hlen > bytes.size() - 8) throw Error(ErrorKind::format, where + ": header length exceeds file size");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, where + ": malformed tensor header: " + e.what());
  }
  if (!header.is_object() || !header.contains("shape") || !header["shape"].is_array()) {
    throw Error(ErrorKind::format, where + ": tensor header lacks a shape array");
  }
  if (header.value("dtype", "") != "f32") throw Error(ErrorKind::format, where + ": unsupported dtype");
  if (header.value("byte_order", "") != "LE") throw Error(ErrorKind::format, where + ": unsupported byte order");

  Tensor t;
  t.name = header.value("name", "");
  for (const auto& s : header["shape"]) {
    if (!s.is_number_integer()) throw Error(ErrorKind::format, where + ": non-integer dimension");
    t.shape.push_back(s.get<std::int64_t>());
  }
  const std::size_t n = t.numel();
  const std::size_t payload = bytes.size() - 8 - hlen;
  if (payload != 4 * n) {
    throw Error(ErrorKind::format, where + ": header/payload mismatch: payload is " + std::to_string(payload) +
                                       " bytes, shape requires " + std::to_string(4 * n));
  }
  t.data.resize(n);
  std::memcpy(t.data.data(), bytes.data() + 8 + hlen, 4 * n);
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : t.data) {
      std::uint32_t w;
      std::memcpy(&w, &f, 4);
      w = bswap32(w);
      std::memcpy(&f, &w, 4);
    }
  }
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, encode_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path), path.string()); }

Tensor to_tensor(std::string name, const Mat& m) {
  Tensor t;
  t.name = std::move(name);
  t.shape = {m.rows(), m.cols()};
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return t;
}

Mat to_mat(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  if (static_cast<std::size_t>(rows * cols) != t.data.size()) {
    throw Error(ErrorKind::shape, "tensor '" + t.name + "' has " + std::to_string(t.data.size()) +
                                      " elements, expected " + std::to_string(rows * cols));
  }
  using FloatMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const FloatMat>(t.data.data(), rows, cols).cast<Real>();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io, "sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

}  // namespace hiervis
