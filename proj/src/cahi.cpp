#include "hiervis/cahi.hpp"

#include <cmath>

namespace hiervis {

int AttentionParams::resolved_head_dim(int model_dim) const {
  if (head_dim > 0) return head_dim;
  return std::max(1, model_dim / std::max(1, heads));
}

float AttentionParams::resolved_scale(int model_dim) const {
  const float denom = scale_denominator > 0.0f ? scale_denominator : static_cast<float>(resolved_head_dim(model_dim));
  return 1.0f / std::sqrt(denom);
}

void AttentionParams::validate(int model_dim) const {
  if (heads < 1) throw Error(ErrorKind::invalid_argument, "attention: heads must be positive");
  if (n_layers < 0) throw Error(ErrorKind::invalid_argument, "attention: n_layers must be >= 0");
  if (head_dim < 0 || scale_denominator < 0) throw Error(ErrorKind::invalid_argument, "attention: negative size");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw Error(ErrorKind::invalid_argument, "attention: dropout outside [0, 1)");
  if (model_dim < 1) throw Error(ErrorKind::invalid_argument, "attention: model width must be positive");
}

CrossAttention::CrossAttention(int model_dim, const AttentionParams& p, const std::string& prefix)
    : model_dim_(model_dim), p_(p) {
  p.validate(model_dim);
  const int H = p.heads * p.resolved_head_dim(model_dim);
  wq = Param(prefix + ".w_q", model_dim, H);
  wk = Param(prefix + ".w_k", model_dim, H);
  wv = Param(prefix + ".w_v", model_dim, H);
  wo = Param(prefix + ".w_o", H, model_dim);
  bo = Param(prefix + ".b_o", 1, model_dim);
}

void CrossAttention::init(Rng& rng) {
  const int H = static_cast<int>(wq.value.cols());
  init_xavier(wq.value, model_dim_, H, rng);
  init_xavier(wk.value, model_dim_, H, rng);
  init_xavier(wv.value, model_dim_, H, rng);
  init_fan_in(wo.value, H, rng);
  bo.value.setZero();
}

Mat CrossAttention::forward(const Mat& lower, const Mat& upper, int batch, AttentionCache* cache) const {
  if (lower.cols() != model_dim_ || upper.cols() != model_dim_) {
    throw Error(ErrorKind::shape, "cross-attention: token width " + std::to_string(lower.cols()) + "/" +
                                      std::to_string(upper.cols()) + " != model width " + std::to_string(model_dim_));
  }
  if (batch < 1 || lower.rows() % batch || upper.rows() % batch) {
    throw Error(ErrorKind::shape, "cross-attention: token rows are not a multiple of the batch size");
  }
  const int Ll = static_cast<int>(lower.rows() / batch);
  const int Lu = static_cast<int>(upper.rows() / batch);
  if (p_.kv_source == KvSource::value_from_query && Ll != Lu) {
    throw Error(ErrorKind::shape, "cross-attention: value_from_query needs equal token counts");
  }
  const int dk = p_.resolved_head_dim(model_dim_);
  const int h = p_.heads;
  const float scale = p_.resolved_scale(model_dim_);

  Mat q, k, v;
  q.noalias() = upper * wq.value;
  k.noalias() = lower * wk.value;
  v.noalias() = (p_.kv_source == KvSource::lower ? lower : upper) * wv.value;

  Mat probs(static_cast<Eigen::Index>(batch) * h * Lu, Ll);
  Mat heads_out(static_cast<Eigen::Index>(batch) * Lu, static_cast<Eigen::Index>(h) * dk);
  for (int b = 0; b < batch; ++b) {
    for (int i = 0; i < h; ++i) {
      const auto qb = q.block(b * Lu, i * dk, Lu, dk);
      const auto kb = k.block(b * Ll, i * dk, Ll, dk);
      const auto vb = v.block(b * Ll, i * dk, Ll, dk);
      Mat s = (qb * kb.transpose()) * scale;
      if (!s.allFinite()) throw Error(ErrorKind::numeric, "cross-attention: non-finite attention logits");
      const ColVec mx = s.rowwise().maxCoeff();
      s = (s.colwise() - mx).array().exp();
      const ColVec z = s.rowwise().sum();
      s.array().colwise() /= z.array();
      probs.block((static_cast<Eigen::Index>(b) * h + i) * Lu, 0, Lu, Ll) = s;
      heads_out.block(b * Lu, i * dk, Lu, dk).noalias() = s * vb;
    }
  }
  Mat out;
  out.noalias() = heads_out * wo.value;
  out.rowwise() += bo.value.row(0);

  if (cache) {
    cache->lower = lower;
    cache->upper = upper;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->heads_out = std::move(heads_out);
    cache->batch = batch;
    cache->l_lower = Ll;
    cache->l_upper = Lu;
  }
  return out;
}

void CrossAttention::backward(const AttentionCache& c, const Mat& d_out, Mat& d_lower, Mat& d_upper) {
  const int dk = p_.resolved_head_dim(model_dim_);
  const int h = p_.heads;
  const float scale = p_.resolved_scale(model_dim_);
  const int Ll = c.l_lower;
  const int Lu = c.l_upper;

  wo.grad.noalias() += c.heads_out.transpose() * d_out;
  bo.grad.row(0) += d_out.colwise().sum();
  Mat d_heads;
  d_heads.noalias() = d_out * wo.value.transpose();

  Mat dq = Mat::Zero(c.q.rows(), c.q.cols());
  Mat dk_ = Mat::Zero(c.k.rows(), c.k.cols());
  Mat dv = Mat::Zero(c.v.rows(), c.v.cols());
  for (int b = 0; b < c.batch; ++b) {
    for (int i = 0; i < h; ++i) {
      const auto p = c.probs.block((static_cast<Eigen::Index>(b) * h + i) * Lu, 0, Lu, Ll);
      const auto dob = d_heads.block(b * Lu, i * dk, Lu, dk);
      const auto qb = c.q.block(b * Lu, i * dk, Lu, dk);
      const auto kb = c.k.block(b * Ll, i * dk, Ll, dk);
      const auto vb = c.v.block(b * Ll, i * dk, Ll, dk);
      const Mat dp = dob * vb.transpose();
      dv.block(b * Ll, i * dk, Ll, dk).noalias() += p.transpose() * dob;
      const ColVec row_dot = (dp.array() * p.array()).rowwise().sum();
      const Mat ds = (p.array() * (dp.colwise() - row_dot).array() * scale).matrix();
      dq.block(b * Lu, i * dk, Lu, dk).noalias() += ds * kb;
      dk_.block(b * Ll, i * dk, Ll, dk).noalias() += ds.transpose() * qb;
    }
  }

  wq.grad.noalias() += c.upper.transpose() * dq;
  d_upper.noalias() += dq * wq.value.transpose();
  wk.grad.noalias() += c.lower.transpose() * dk_;
  d_lower.noalias() += dk_ * wk.value.transpose();
  if (p_.kv_source == KvSource::lower) {
    wv.grad.noalias() += c.lower.transpose() * dv;
    d_lower.noalias() += dv * wv.value.transpose();
  } else {
    wv.grad.noalias() += c.upper.transpose() * dv;
    d_upper.noalias() += dv * wv.value.transpose();
  }
}

IntegrationBlock::IntegrationBlock(int model_dim, const AttentionParams& p, const std::string& prefix)
    : attn(model_dim, p, prefix + ".attn"),
      ln_gamma(prefix + ".norm.weight", 1, model_dim),
      ln_beta(prefix + ".norm.bias", 1, model_dim),
      p_(p) {
  ln_gamma.value.setOnes();
}

Mat IntegrationBlock::forward(const Mat& lower, const Mat& upper, int batch, Mode mode, Rng* rng,
                              BlockCache* cache) const {
  Mat a = attn.forward(lower, upper, batch, cache ? &cache->attn : nullptr);
  Mat drop;
  if (mode == Mode::train && p_.dropout > 0.0f) {
    if (!rng) throw Error(ErrorKind::invalid_argument, "integration: train-mode dropout needs an rng");
    drop = dropout_mask(a.rows(), a.cols(), p_.dropout, *rng);
    a.array() *= drop.array();
  }
  Mat y = layernorm_forward(upper + a, ln_gamma, ln_beta, p_.ln_eps, cache ? &cache->ln : nullptr);
  if (cache) cache->drop = std::move(drop);
  return y;
}

void IntegrationBlock::backward(const BlockCache& cache, const Mat& d_out, Mat& d_lower, Mat& d_upper) {
  const Mat d_sum = layernorm_backward(d_out, ln_gamma, ln_beta, cache.ln);
  d_upper += d_sum;
  Mat d_attn = d_sum;
  if (cache.drop.size()) d_attn.array() *= cache.drop.array();
  attn.backward(cache.attn, d_attn, d_lower, d_upper);
}

std::vector<Param*> IntegrationBlock::params() {
  auto out = attn.params();
  out.push_back(&ln_gamma);
  out.push_back(&ln_beta);
  return out;
}

FlattenProjection::FlattenProjection(int tokens, int model_dim, int embed_dim, const std::string& prefix)
    : weight(prefix + ".weight", embed_dim, static_cast<Eigen::Index>(tokens) * model_dim),
      bias(prefix + ".bias", 1, embed_dim),
      tokens_(tokens),
      model_dim_(model_dim) {}

void FlattenProjection::init(Rng& rng) {
  init_fan_in(weight.value, tokens_ * model_dim_, rng);
  init_fan_in(bias.value, tokens_ * model_dim_, rng);
}

Mat FlattenProjection::forward(const Mat& tokens, int batch) const {
  if (tokens.rows() != static_cast<Eigen::Index>(batch) * tokens_ || tokens.cols() != model_dim_) {
    throw Error(ErrorKind::shape, "flatten_project: expected " + std::to_string(tokens_) + " tokens of width " +
                                      std::to_string(model_dim_) + " per sample");
  }
  ConstMatMap flat(tokens.data(), batch, static_cast<Eigen::Index>(tokens_) * model_dim_);
  Mat out;
  out.noalias() = flat * weight.value.transpose();
  out.rowwise() += bias.value.row(0);
  return out;
}

Mat FlattenProjection::backward(const Mat& tokens, int batch, const Mat& d_out) {
  ConstMatMap flat(tokens.data(), batch, static_cast<Eigen::Index>(tokens_) * model_dim_);
  weight.grad.noalias() += d_out.transpose() * flat;
  bias.grad.row(0) += d_out.colwise().sum();
  Mat d_flat;
  d_flat.noalias() = d_out * weight.value;
  return MatMap(d_flat.data(), static_cast<Eigen::Index>(batch) * tokens_, model_dim_);
}

Cahi::Cahi(int tokens, int model_dim, int embed_dim, const AttentionParams& p)
    : tokens_(tokens), model_dim_(model_dim), embed_dim_(embed_dim), p_(p) {
  p.validate(model_dim);
  if (p.integrates()) {
    for (int k = 0; k < p.n_layers; ++k) {
      contour_to_object.emplace_back(model_dim, p, "cahi.contour_to_object." + std::to_string(k));
      object_to_context.emplace_back(model_dim, p, "cahi.object_to_context." + std::to_string(k));
    }
  }
  projections = {FlattenProjection(tokens, model_dim, embed_dim, "head.contour"),
                 FlattenProjection(tokens, model_dim, embed_dim, "head.object"),
                 FlattenProjection(tokens, model_dim, embed_dim, "head.context")};
}

void Cahi::init(Rng& rng) {
  for (auto& b : contour_to_object) b.init(rng);
  for (auto& b : object_to_context) b.init(rng);
  for (auto& p : projections) p.init(rng);
}

std::array<Mat, 2> Cahi::integrate(const std::array<Mat, 3>& init, int batch, Mode mode, Rng* rng,
                                   CahiCache* cache) const {
  if (cache) {
    cache->object_blocks.assign(contour_to_object.size(), {});
    cache->context_blocks.assign(object_to_context.size(), {});
  }
  Mat object = init[1];
  for (std::size_t k = 0; k < contour_to_object.size(); ++k) {
    object = contour_to_object[k].forward(init[0], object, batch, mode, rng, cache ? &cache->object_blocks[k] : nullptr);
  }
  // Keys for the context integration come from the refined object tokens.
  Mat context = init[2];
  for (std::size_t k = 0; k < object_to_context.size(); ++k) {
    context = object_to_context[k].forward(object, context, batch, mode, rng, cache ? &cache->context_blocks[k] : nullptr);
  }
  return {std::move(object), std::move(context)};
}

HierarchicalFeatures Cahi::forward(const std::array<Mat, 3>& init, int batch, Mode mode, Rng* rng,
                                   CahiCache* cache) const {
  auto [object, context] = integrate(init, batch, mode, rng, cache);
  HierarchicalFeatures f;
  f.contour = projections[0].forward(init[0], batch);
  f.object = projections[1].forward(object, batch);
  f.context = projections[2].forward(context, batch);
  if (cache) {
    cache->init_tokens = init;
    cache->object_tokens = std::move(object);
    cache->context_tokens = std::move(context);
    cache->batch = batch;
  }
  return f;
}

std::array<Mat, 3> Cahi::backward(const CahiCache& c, const HierarchicalFeatures& d) {
  Mat d_contour = projections[0].backward(c.init_tokens[0], c.batch, d.contour);
  Mat d_object = projections[1].backward(c.object_tokens, c.batch, d.object);
  Mat d_context = projections[2].backward(c.context_tokens, c.batch, d.context);

  for (std::size_t k = object_to_context.size(); k-- > 0;) {
    const auto& bc = c.context_blocks[k];
    Mat d_lower = Mat::Zero(bc.attn.lower.rows(), bc.attn.lower.cols());
    Mat d_upper = Mat::Zero(bc.attn.upper.rows(), bc.attn.upper.cols());
    object_to_context[k].backward(bc, d_context, d_lower, d_upper);
    d_object += d_lower;
    d_context = std::move(d_upper);
  }
  for (std::size_t k = contour_to_object.size(); k-- > 0;) {
    const auto& bc = c.object_blocks[k];
    Mat d_lower = Mat::Zero(bc.attn.lower.rows(), bc.attn.lower.cols());
    Mat d_upper = Mat::Zero(bc.attn.upper.rows(), bc.attn.upper.cols());
    contour_to_object[k].backward(bc, d_object, d_lower, d_upper);
    d_contour += d_lower;
    d_object = std::move(d_upper);
  }
  return {std::move(d_contour), std::move(d_object), std::move(d_context)};
}

std::vector<Param*> Cahi::params() {
  std::vector<Param*> out;
  for (auto& b : contour_to_object)
    for (auto* p : b.params()) out.push_back(p);
  for (auto& b : object_to_context)
    for (auto* p : b.params()) out.push_back(p);
  for (auto& pr : projections)
    for (auto* p : pr.params()) out.push_back(p);
  return out;
}

Mat cross_attention(const Mat& lower, const Mat& upper, const CrossAttention& attn) {
  return attn.forward(lower, upper, 1, nullptr);
}

Mat integrate_contour_to_object(const Mat& contour_init, const Mat& object_init, const IntegrationBlock& block,
                                Mode mode, Rng* rng) {
  return block.forward(contour_init, object_init, 1, mode, rng, nullptr);
}

Mat integrate_object_to_context(const Mat& object_refined, const Mat& context_init, const IntegrationBlock& block,
                                Mode mode, Rng* rng) {
  return block.forward(object_refined, context_init, 1, mode, rng, nullptr);
}

RowVec flatten_project(const Mat& tokens, const FlattenProjection& proj) {
  return proj.forward(tokens, 1).row(0);
}

}  // namespace hiervis
