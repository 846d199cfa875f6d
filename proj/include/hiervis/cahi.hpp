#pragma once

#include "hiervis/common.hpp"
#include "hiervis/layers.hpp"

#include <array>
#include <string>
#include <vector>

namespace hiervis {

// Where the value projection reads from. `lower`: keys and values from the lower-level
// stream, queries from the higher-level one. `value_from_query`: values from the
// higher-level stream as well (requires equal token counts).
enum class KvSource { lower, value_from_query };

struct AttentionParams {
  int heads = 3;
  int head_dim = 0;                // 0: model_dim / heads
  float scale_denominator = 0.0f;  // 0: head_dim; logits are divided by sqrt(this)
  int n_layers = 1;                // blocks per integration direction; 0 bypasses integration
  float dropout = 0.5f;
  KvSource kv_source = KvSource::lower;
  bool enabled = true;             // false: the "without cross-attention" ablation
  float ln_eps = 1e-5f;

  int resolved_head_dim(int model_dim) const;
  float resolved_scale(int model_dim) const;
  bool integrates() const { return enabled && n_layers > 0; }
  void validate(int model_dim) const;
};

struct AttentionCache {
  Mat lower;
  Mat upper;
  Mat q, k, v;   // [(B*L) x H]
  Mat probs;     // [(B*heads*L_upper) x L_lower]
  Mat heads_out; // [(B*L_upper) x H]
  int batch = 0;
  int l_lower = 0;
  int l_upper = 0;
};

// Multi-head cross-attention. `lower` ([(B*L_lower) x m]) supplies keys (and values by
// default); `upper` ([(B*L_upper) x m]) supplies queries. Output has upper's token count.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(int model_dim, const AttentionParams& p, const std::string& prefix);

  void init(Rng& rng);
  Mat forward(const Mat& lower, const Mat& upper, int batch, AttentionCache* cache) const;
  // Adds into d_lower / d_upper, which must already have the input shapes.
  void backward(const AttentionCache& cache, const Mat& d_out, Mat& d_lower, Mat& d_upper);

  std::vector<Param*> params() { return {&wq, &wk, &wv, &wo, &bo}; }

  Param wq, wk, wv;  // [m x heads*head_dim], head i in columns i*head_dim ..
  Param wo;          // [heads*head_dim x m]
  Param bo;          // [1 x m]

 private:
  int model_dim_ = 0;
  AttentionParams p_;
};

struct BlockCache {
  AttentionCache attn;
  Mat drop;
  LayerNormCache ln;
};

// upper' = LayerNorm(upper + Dropout(CrossAttention(lower, upper)))
class IntegrationBlock {
 public:
  IntegrationBlock() = default;
  IntegrationBlock(int model_dim, const AttentionParams& p, const std::string& prefix);

  void init(Rng& rng) { attn.init(rng); }
  Mat forward(const Mat& lower, const Mat& upper, int batch, Mode mode, Rng* rng, BlockCache* cache) const;
  void backward(const BlockCache& cache, const Mat& d_out, Mat& d_lower, Mat& d_upper);

  std::vector<Param*> params();

  CrossAttention attn;
  Param ln_gamma, ln_beta;

 private:
  AttentionParams p_;
};

// Row-major flatten of each sample's [L x m] tokens followed by a linear map to d.
class FlattenProjection {
 public:
  FlattenProjection() = default;
  FlattenProjection(int tokens, int model_dim, int embed_dim, const std::string& prefix);

  void init(Rng& rng);
  Mat forward(const Mat& tokens, int batch) const;
  // Returns d_tokens in the [(B*L) x m] layout.
  Mat backward(const Mat& tokens, int batch, const Mat& d_out);

  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight;  // [d x L*m]
  Param bias;    // [1 x d]

 private:
  int tokens_ = 0;
  int model_dim_ = 0;
};

// Batch of hierarchical features, each [B x d].
struct HierarchicalFeatures {
  Mat contour;
  Mat object;
  Mat context;

  Mat& view(int v) { return v == 0 ? contour : v == 1 ? object : context; }
  const Mat& view(int v) const { return v == 0 ? contour : v == 1 ? object : context; }
};

struct CahiCache {
  std::array<Mat, 3> init_tokens;
  Mat object_tokens;
  Mat context_tokens;
  std::vector<BlockCache> object_blocks;
  std::vector<BlockCache> context_blocks;
  int batch = 0;
};

// Bottom-up integration contour -> object -> context followed by per-view projection.
// The contour stream is projected without integration.
class Cahi {
 public:
  Cahi() = default;
  Cahi(int tokens, int model_dim, int embed_dim, const AttentionParams& p);

  void init(Rng& rng);
  HierarchicalFeatures forward(const std::array<Mat, 3>& init_tokens, int batch, Mode mode, Rng* rng,
                               CahiCache* cache) const;
  // Returns gradients with respect to the three initial token sequences.
  std::array<Mat, 3> backward(const CahiCache& cache, const HierarchicalFeatures& d_features);

  // Refined object and context tokens (before projection).
  std::array<Mat, 2> integrate(const std::array<Mat, 3>& init_tokens, int batch, Mode mode, Rng* rng,
                               CahiCache* cache) const;

  std::vector<Param*> params();
  const AttentionParams& config() const { return p_; }

  std::vector<IntegrationBlock> contour_to_object;
  std::vector<IntegrationBlock> object_to_context;
  std::array<FlattenProjection, 3> projections;

 private:
  int tokens_ = 0;
  int model_dim_ = 0;
  int embed_dim_ = 0;
  AttentionParams p_;
};

// Single-sample forms over [L x m] token sequences.
Mat cross_attention(const Mat& lower, const Mat& upper, const CrossAttention& attn);
Mat integrate_contour_to_object(const Mat& contour_init, const Mat& object_init, const IntegrationBlock& block,
                                Mode mode = Mode::eval, Rng* rng = nullptr);
Mat integrate_object_to_context(const Mat& object_refined, const Mat& context_init, const IntegrationBlock& block,
                                Mode mode = Mode::eval, Rng* rng = nullptr);
RowVec flatten_project(const Mat& tokens, const FlattenProjection& proj);

}  // namespace hiervis
