#pragma once

#include "hiervis/cahi.hpp"
#include "hiervis/encoder.hpp"
#include "hiervis/objective.hpp"

#include <cstdint>
#include <vector>

namespace hiervis {

struct ModelConfig {
  STConvParams encoder;
  AttentionParams attention;
  int embed_dim = 1024;
  float init_logit_scale = kInitLogitScale;

  void validate() const;
};

struct ModelCache {
  std::array<StconvCache, 3> encoder;
  CahiCache cahi;
};

// Tri-stream encoder, cross-attention integration and the learnable logit scale.
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg);

  // Deterministic initialisation from a seed.
  void init(std::uint64_t seed);

  HierarchicalFeatures forward(const Mat& windows, int batch, Mode mode, Rng* rng, ModelCache* cache) const;
  void backward(const ModelCache& cache, const HierarchicalFeatures& d_features);
  void update_running_stats(const ModelCache& cache);

  std::vector<Param*> params();
  std::vector<Buffer*> buffers();
  void zero_grad();

  std::vector<Mat> snapshot();
  void restore(const std::vector<Mat>& snap);

  const ModelConfig& config() const { return cfg_; }
  int tokens() const { return cfg_.encoder.token_count(); }

  TriStreamEncoder encoder;
  Cahi cahi;
  Param logit_scale;

 private:
  ModelConfig cfg_;
};

struct LossEval {
  double loss = 0.0;
  double logit_scale = 0.0;
};

// Forward + InfoNCE on one batch; with `backward` set, also accumulates parameter
// gradients (callers zero them first). `targets` rows are [C_b | C_f | C_r].
LossEval batch_loss(Model& model, const Mat& windows, int batch, const Mat& targets, ViewSet views,
                    LossDirection direction, Mode mode, Rng* rng, bool backward, ModelCache* cache = nullptr);

}  // namespace hiervis
