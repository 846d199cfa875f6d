#pragma once

#include "hiervis/common.hpp"
#include "hiervis/tensor_file.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace hiervis {

inline constexpr int kDecompositionSize = 512;
inline constexpr float kDefaultMaskThreshold = 0.5f;

// Float image, [height x width x channels] row-major, values nominally in [0, 1].
struct Image {
  std::string id;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  std::size_t size() const { return static_cast<std::size_t>(height) * width * channels; }
};

struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

struct StimulusTriplet {
  BinaryMask mask;   // contour view
  Image foreground;  // object view, raw with background zeroed
  Image raw;         // scene view
};

struct EmbeddingTriplet {
  std::vector<float> contour;
  std::vector<float> object;
  std::vector<float> context;

  int dim() const { return static_cast<int>(contour.size()); }
};

class SaliencyProvider {
 public:
  virtual ~SaliencyProvider() = default;
  virtual SaliencyMap saliency(const Image& image) = 0;
  virtual std::string provider_id() const = 0;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<float> embed(const Image& image) = 0;
  virtual int dim() const = 0;
  virtual std::string provider_id() const = 0;
};

// Min-max normalized luminance. A stand-in for a real segmentation model.
class LuminanceSaliency final : public SaliencyProvider {
 public:
  SaliencyMap saliency(const Image& image) override;
  std::string provider_id() const override { return "luminance"; }
};

// Reads precomputed maps from <dir>/<image id>.tensor ([H x W] in [0,1]).
class TensorFileSaliency final : public SaliencyProvider {
 public:
  explicit TensorFileSaliency(std::filesystem::path dir) : dir_(std::move(dir)) {}
  SaliencyMap saliency(const Image& image) override;
  std::string provider_id() const override { return "tensorfile"; }

 private:
  std::filesystem::path dir_;
};

// Means of `dim` contiguous chunks of the flattened pixel buffer.
class MeanPoolEmbedding final : public EmbeddingProvider {
 public:
  explicit MeanPoolEmbedding(int dim = 1024) : dim_(dim) {}
  std::vector<float> embed(const Image& image) override;
  int dim() const override { return dim_; }
  std::string provider_id() const override { return "meanpool" + std::to_string(dim_); }

 private:
  int dim_;
};

// Adapters for external models. The command is run as `<command> <input.tensor> <output.tensor>`;
// the input is the image as an [H x W x C] tensor, the output a saliency map [H x W] or an
// embedding vector [d].
class CommandSaliency final : public SaliencyProvider {
 public:
  CommandSaliency(std::string command, std::string id) : command_(std::move(command)), id_(std::move(id)) {}
  SaliencyMap saliency(const Image& image) override;
  std::string provider_id() const override { return id_; }

 private:
  std::string command_;
  std::string id_;
};

class CommandEmbedding final : public EmbeddingProvider {
 public:
  CommandEmbedding(std::string command, std::string id, int dim)
      : command_(std::move(command)), id_(std::move(id)), dim_(dim) {}
  std::vector<float> embed(const Image& image) override;
  int dim() const override { return dim_; }
  std::string provider_id() const override { return id_; }

 private:
  std::string command_;
  std::string id_;
  int dim_;
};

BinaryMask binarize(const SaliencyMap& s, float tau);
Image extract_foreground(const Image& raw, const BinaryMask& mask);
Image resize_bilinear(const Image& image, int height, int width);
// The binary map replicated over three colour channels, as handed to image encoders.
Image mask_to_image(const BinaryMask& mask);

StimulusTriplet decompose(const Image& image, SaliencyProvider& provider, float tau = kDefaultMaskThreshold,
                          int size = kDecompositionSize);

// Throws if I_f != I_r * I_b anywhere.
void check_triplet(const StimulusTriplet& t);

// Content-addressed store: <root>/<provider_id>/<hash>.tensor holding a [3 x d] tensor
// (rows b, f, r). Writes are serialized per key; reads may run concurrently.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {}

  static std::string key(const std::string& provider_id, float tau, const Image& raw);
  std::filesystem::path path_for(const std::string& provider_id, const std::string& key) const;

  // nullopt on a miss. A corrupted entry is reported as a miss with a warning.
  std::optional<EmbeddingTriplet> lookup(const std::string& provider_id, const std::string& key, int dim) const;
  // Write-once: an existing valid entry is left untouched.
  void store(const std::string& provider_id, const std::string& key, const EmbeddingTriplet& t);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::shared_mutex& shard(const std::string& key) const;

  std::filesystem::path root_;
  mutable std::array<std::shared_mutex, 32> shards_;
};

// Triplet directory: mask.tensor [H x W], foreground.tensor and raw.tensor [H x W x C],
// triplet.json {id, tau, saliency_provider}.
struct TripletRecord {
  std::string id;
  float tau = kDefaultMaskThreshold;
  std::string saliency_provider;
  StimulusTriplet triplet;
};

void save_triplet(const std::filesystem::path& dir, const TripletRecord& rec);
TripletRecord load_triplet(const std::filesystem::path& dir);

Tensor image_to_tensor(const Image& image);
// Accepts [H x W] (one channel) or [H x W x C].
Image image_from_tensor(const Tensor& t, std::string id);

EmbeddingTriplet embed_triplet(const StimulusTriplet& t, EmbeddingProvider& provider, EmbeddingCache* cache = nullptr,
                               float tau = kDefaultMaskThreshold);

}  // namespace hiervis
