#include "hiervis/decomposition.hpp"

#include "hiervis/tensor_file.hpp"

#include <nlohmann/json.hpp>

#include <spdlog/spdlog.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>

namespace hiervis {

namespace fs = std::filesystem;

Tensor image_to_tensor(const Image& image) {
  Tensor t;
  t.name = image.id;
  t.shape = {image.height, image.width, image.channels};
  t.data = image.data;
  return t;
}

Image image_from_tensor(const Tensor& t, std::string id) {
  if (t.shape.size() != 2 && t.shape.size() != 3) {
    throw Error(ErrorKind::shape, "image tensor '" + id + "' must be [H x W] or [H x W x C]");
  }
  Image img;
  img.id = std::move(id);
  img.height = static_cast<int>(t.shape[0]);
  img.width = static_cast<int>(t.shape[1]);
  img.channels = t.shape.size() == 3 ? static_cast<int>(t.shape[2]) : 1;
  if (img.height < 1 || img.width < 1 || img.channels < 1) throw Error(ErrorKind::shape, "empty image tensor");
  img.data = t.data;
  return img;
}

namespace {

void validate_saliency(const SaliencyMap& s) {
  if (s.values.size() != static_cast<std::size_t>(s.height) * s.width) {
    throw Error(ErrorKind::shape, "saliency map size does not match its dimensions");
  }
  for (float v : s.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw Error(ErrorKind::invalid_argument, "saliency value outside [0, 1]");
  }
}

fs::path scratch_path(const std::string& tag) {
  static std::atomic<unsigned> counter{0};
  return fs::temp_directory_path() /
         ("hiervis-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + ".tensor");
}

Tensor run_command(const std::string& command, const Tensor& input) {
  const auto in = scratch_path("in");
  const auto out = scratch_path("out");
  write_tensor(in, input);
  const std::string cmd = command + " '" + in.string() + "' '" + out.string() + "'";
  const int rc = std::system(cmd.c_str());
  fs::remove(in);
  if (rc != 0) {
    fs::remove(out);
    throw Error(ErrorKind::provider, "provider command failed (exit " + std::to_string(rc) + "): " + command);
  }
  Tensor result = read_tensor(out);
  fs::remove(out);
  return result;
}

}  // namespace

SaliencyMap LuminanceSaliency::saliency(const Image& image) {
  SaliencyMap s;
  s.height = image.height;
  s.width = image.width;
  s.values.resize(static_cast<std::size_t>(image.height) * image.width);
  for (std::size_t p = 0; p < s.values.size(); ++p) {
    float acc = 0.0f;
    for (int c = 0; c < image.channels; ++c) acc += image.data[p * image.channels + c];
    s.values[p] = acc / static_cast<float>(image.channels);
  }
  const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  const float a = *lo;
  const float range = *hi - *lo;
  for (auto& v : s.values) v = range > 0 ? std::clamp((v - a) / range, 0.0f, 1.0f) : 0.0f;
  return s;
}

SaliencyMap TensorFileSaliency::saliency(const Image& image) {
  const auto path = dir_ / (image.id + ".tensor");
  Tensor t = read_tensor(path);
  if (t.shape.size() != 2) throw Error(ErrorKind::format, path.string() + ": saliency must be [H x W]");
  SaliencyMap s;
  s.height = static_cast<int>(t.shape[0]);
  s.width = static_cast<int>(t.shape[1]);
  s.values = std::move(t.data);
  return s;
}

std::vector<float> MeanPoolEmbedding::embed(const Image& image) {
  const std::size_t n = image.data.size();
  if (n == 0) throw Error(ErrorKind::invalid_argument, "cannot embed an empty image");
  std::vector<float> out(dim_);
  for (int i = 0; i < dim_; ++i) {
    const std::size_t lo = n * i / dim_;
    std::size_t hi = n * (i + 1) / dim_;
    if (hi == lo) hi = lo + 1;
    double acc = 0.0;
    for (std::size_t k = lo; k < hi && k < n; ++k) acc += image.data[k];
    out[i] = static_cast<float>(acc / static_cast<double>(hi - lo));
  }
  return out;
}

SaliencyMap CommandSaliency::saliency(const Image& image) {
  Tensor t = run_command(command_, image_to_tensor(image));
  if (t.shape.size() != 2) throw Error(ErrorKind::provider, id_ + ": saliency output must be [H x W]");
  SaliencyMap s;
  s.height = static_cast<int>(t.shape[0]);
  s.width = static_cast<int>(t.shape[1]);
  s.values = std::move(t.data);
  return s;
}

std::vector<float> CommandEmbedding::embed(const Image& image) {
  Tensor t = run_command(command_, image_to_tensor(image));
  return std::move(t.data);
}

BinaryMask binarize(const SaliencyMap& s, float tau) {
  if (!(tau >= 0.0f && tau <= 1.0f)) {
    throw Error(ErrorKind::invalid_argument, "mask threshold tau=" + std::to_string(tau) + " outside [0, 1]");
  }
  validate_saliency(s);
  BinaryMask m;
  m.height = s.height;
  m.width = s.width;
  m.values.resize(s.values.size());
  std::transform(s.values.begin(), s.values.end(), m.values.begin(),
                 [tau](float v) { return static_cast<std::uint8_t>(v > tau ? 1 : 0); });
  return m;
}

Image extract_foreground(const Image& raw, const BinaryMask& mask) {
  if (raw.height != mask.height || raw.width != mask.width) {
    throw Error(ErrorKind::shape, "image " + std::to_string(raw.height) + "x" + std::to_string(raw.width) +
                                      " and mask " + std::to_string(mask.height) + "x" +
                                      std::to_string(mask.width) + " differ in size");
  }
  if (raw.data.size() != raw.size()) throw Error(ErrorKind::shape, "image buffer does not match its dimensions");
  Image out = raw;
  const std::size_t pixels = static_cast<std::size_t>(raw.height) * raw.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    if (mask.values[p] == 0) {
      std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(p * raw.channels), raw.channels, 0.0f);
    }
  }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw Error(ErrorKind::invalid_argument, "resize target must be positive");
  if (image.height == height && image.width == width) return image;
  Image out;
  out.id = image.id;
  out.height = height;
  out.width = width;
  out.channels = image.channels;
  out.data.resize(out.size());
  // Half-pixel centres, edge clamped.
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(image.data[(static_cast<std::size_t>(yy) * image.width + xx) * image.channels + c]);
        };
        const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
        out.data[(static_cast<std::size_t>(y) * width + x) * out.channels + c] = static_cast<float>(v);
      }
    }
  }
  return out;
}

Image mask_to_image(const BinaryMask& mask) {
  Image img;
  img.height = mask.height;
  img.width = mask.width;
  img.channels = 3;
  img.data.resize(img.size());
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    const float v = mask.values[p] ? 1.0f : 0.0f;
    img.data[3 * p] = img.data[3 * p + 1] = img.data[3 * p + 2] = v;
  }
  return img;
}

StimulusTriplet decompose(const Image& image, SaliencyProvider& provider, float tau, int size) {
  if (!(tau >= 0.0f && tau <= 1.0f)) throw Error(ErrorKind::invalid_argument, "mask threshold outside [0, 1]");
  StimulusTriplet t;
  t.raw = resize_bilinear(image, size, size);
  SaliencyMap s;
  try {
    s = provider.saliency(t.raw);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::provider,
                "saliency provider '" + provider.provider_id() + "' failed on image '" + image.id + "': " + e.what());
  }
  if (s.height != size || s.width != size) {
    throw Error(ErrorKind::provider, "saliency provider returned a " + std::to_string(s.height) + "x" +
                                         std::to_string(s.width) + " map for image '" + image.id + "'");
  }
  t.mask = binarize(s, tau);
  t.foreground = extract_foreground(t.raw, t.mask);
  t.foreground.id = image.id;
  return t;
}

void check_triplet(const StimulusTriplet& t) {
  const Image expect = extract_foreground(t.raw, t.mask);
  if (expect.data != t.foreground.data) {
    throw Error(ErrorKind::numeric, "triplet '" + t.raw.id + "' violates foreground = raw * mask");
  }
  for (auto v : t.mask.values) {
    if (v > 1) throw Error(ErrorKind::numeric, "mask is not binary");
  }
}

std::string EmbeddingCache::key(const std::string& provider_id, float tau, const Image& raw) {
  std::string canon = provider_id;
  canon.push_back('\0');
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g|%d|%d|%d", static_cast<double>(tau), raw.height, raw.width, raw.channels);
  canon += buf;
  canon.push_back('\0');
  canon += encode_tensor(Tensor{"", {static_cast<std::int64_t>(raw.data.size())}, raw.data});
  return sha256_hex(canon);
}

fs::path EmbeddingCache::path_for(const std::string& provider_id, const std::string& key) const {
  return root_ / provider_id / (key + ".tensor");
}

std::shared_mutex& EmbeddingCache::shard(const std::string& key) const {
  return shards_[std::hash<std::string>{}(key) % shards_.size()];
}

std::optional<EmbeddingTriplet> EmbeddingCache::lookup(const std::string& provider_id, const std::string& key,
                                                        int dim) const {
  const auto path = path_for(provider_id, key);
  std::shared_lock lock(shard(key));
  if (!fs::exists(path)) return std::nullopt;
  try {
    Tensor t = read_tensor(path);
    if (t.shape != std::vector<std::int64_t>{3, dim}) throw Error(ErrorKind::format, "unexpected cache entry shape");
    for (float v : t.data) {
      if (!std::isfinite(v)) throw Error(ErrorKind::format, "non-finite cache entry");
    }
    EmbeddingTriplet e;
    e.contour.assign(t.data.begin(), t.data.begin() + dim);
    e.object.assign(t.data.begin() + dim, t.data.begin() + 2 * dim);
    e.context.assign(t.data.begin() + 2 * dim, t.data.end());
    return e;
  } catch (const Error& e) {
    spdlog::warn("embedding cache entry {} is corrupted ({}); recomputing", path.string(), e.what());
    return std::nullopt;
  }
}

void EmbeddingCache::store(const std::string& provider_id, const std::string& key, const EmbeddingTriplet& t) {
  const auto path = path_for(provider_id, key);
  std::unique_lock lock(shard(key));
  const int d = t.dim();
  if (fs::exists(path)) {
    try {
      Tensor existing = read_tensor(path);
      if (existing.shape == std::vector<std::int64_t>{3, d}) return;
    } catch (const Error&) {
      // fall through and replace the corrupted entry
    }
  }
  Tensor out;
  out.name = key;
  out.shape = {3, d};
  out.data = t.contour;
  out.data.insert(out.data.end(), t.object.begin(), t.object.end());
  out.data.insert(out.data.end(), t.context.begin(), t.context.end());
  write_tensor(path, out);
}

void save_triplet(const fs::path& dir, const TripletRecord& rec) {
  check_triplet(rec.triplet);
  fs::create_directories(dir);
  const BinaryMask& m = rec.triplet.mask;
  Tensor mask{"mask", {m.height, m.width}, std::vector<float>(m.values.begin(), m.values.end())};
  write_tensor(dir / "mask.tensor", mask);
  Tensor fg = image_to_tensor(rec.triplet.foreground);
  fg.name = "foreground";
  write_tensor(dir / "foreground.tensor", fg);
  Tensor raw = image_to_tensor(rec.triplet.raw);
  raw.name = "raw";
  write_tensor(dir / "raw.tensor", raw);
  const nlohmann::json meta = {
      {"id", rec.id}, {"tau", static_cast<double>(rec.tau)}, {"saliency_provider", rec.saliency_provider}};
  write_file_atomic(dir / "triplet.json", meta.dump(2) + "\n");
}

TripletRecord load_triplet(const fs::path& dir) {
  TripletRecord rec;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "triplet.json"));
    rec.id = meta.at("id").get<std::string>();
    rec.tau = meta.at("tau").get<float>();
    rec.saliency_provider = meta.value("saliency_provider", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, (dir / "triplet.json").string() + ": " + e.what());
  }
  const Tensor mask = read_tensor(dir / "mask.tensor");
  if (mask.shape.size() != 2) throw Error(ErrorKind::shape, (dir / "mask.tensor").string() + " must be [H x W]");
  rec.triplet.mask.height = static_cast<int>(mask.shape[0]);
  rec.triplet.mask.width = static_cast<int>(mask.shape[1]);
  for (float v : mask.data) {
    if (v != 0.0f && v != 1.0f) throw Error(ErrorKind::format, (dir / "mask.tensor").string() + " is not binary");
    rec.triplet.mask.values.push_back(static_cast<std::uint8_t>(v));
  }
  rec.triplet.raw = image_from_tensor(read_tensor(dir / "raw.tensor"), rec.id);
  rec.triplet.foreground = image_from_tensor(read_tensor(dir / "foreground.tensor"), rec.id);
  check_triplet(rec.triplet);
  return rec;
}

EmbeddingTriplet embed_triplet(const StimulusTriplet& t, EmbeddingProvider& provider, EmbeddingCache* cache,
                               float tau) {
  const int d = provider.dim();
  std::string key;
  if (cache) {
    key = EmbeddingCache::key(provider.provider_id(), tau, t.raw);
    if (auto hit = cache->lookup(provider.provider_id(), key, d)) return *hit;
  }

  auto run = [&](const Image& img, const char* view) {
    std::vector<float> v;
    try {
      v = provider.embed(img);
    } catch (const Error& e) {
      throw Error(ErrorKind::provider, "embedding provider '" + provider.provider_id() + "' failed on " + view +
                                           " view of '" + t.raw.id + "': " + e.what());
    }
    if (static_cast<int>(v.size()) != d) {
      throw Error(ErrorKind::shape, "embedding provider '" + provider.provider_id() + "' returned dimension " +
                                        std::to_string(v.size()) + ", expected " + std::to_string(d));
    }
    for (float x : v) {
      if (!std::isfinite(x)) throw Error(ErrorKind::numeric, "embedding provider returned a non-finite value");
    }
    return v;
  };

  EmbeddingTriplet e;
  e.contour = run(mask_to_image(t.mask), "contour");
  e.object = run(t.foreground, "object");
  e.context = run(t.raw, "context");
  if (cache) cache->store(provider.provider_id(), key, e);
  return e;
}

}  // namespace hiervis
