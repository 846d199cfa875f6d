#include "hiervis/model.hpp"

namespace hiervis {

void ModelConfig::validate() const {
  encoder.validate();
  attention.validate(encoder.proj_dim);
  if (embed_dim < 1) throw Error(ErrorKind::invalid_argument, "embed_dim must be positive");
}

Model::Model(const ModelConfig& cfg)
    : encoder(cfg.encoder),
      cahi(cfg.encoder.token_count(), cfg.encoder.proj_dim, cfg.embed_dim, cfg.attention),
      logit_scale("logit_scale", 1, 1),
      cfg_(cfg) {
  cfg.validate();
  logit_scale.value(0, 0) = cfg.init_logit_scale;
}

void Model::init(std::uint64_t seed) {
  Rng rng(seed);
  encoder.init(rng);
  cahi.init(rng);
  logit_scale.value(0, 0) = cfg_.init_logit_scale;
}

HierarchicalFeatures Model::forward(const Mat& windows, int batch, Mode mode, Rng* rng, ModelCache* cache) const {
  auto tokens = encoder.forward(windows, batch, mode, rng, cache ? &cache->encoder : nullptr);
  return cahi.forward(tokens, batch, mode, rng, cache ? &cache->cahi : nullptr);
}

void Model::backward(const ModelCache& cache, const HierarchicalFeatures& d_features) {
  const auto d_tokens = cahi.backward(cache.cahi, d_features);
  for (int v = 0; v < 3; ++v) encoder.streams[v].backward(cache.encoder[v], d_tokens[v]);
}

void Model::update_running_stats(const ModelCache& cache) {
  for (int v = 0; v < 3; ++v) encoder.streams[v].update_running_stats(cache.encoder[v]);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  for (auto& s : encoder.streams)
    for (auto* p : s.params()) out.push_back(p);
  for (auto* p : cahi.params()) out.push_back(p);
  out.push_back(&logit_scale);
  return out;
}

std::vector<Buffer*> Model::buffers() {
  std::vector<Buffer*> out;
  for (auto& s : encoder.streams)
    for (auto* b : s.buffers()) out.push_back(b);
  return out;
}

void Model::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::vector<Mat> Model::snapshot() {
  std::vector<Mat> out;
  for (auto* p : params()) out.push_back(p->value);
  for (auto* b : buffers()) out.push_back(b->value);
  return out;
}

void Model::restore(const std::vector<Mat>& snap) {
  std::size_t i = 0;
  for (auto* p : params()) p->value = snap.at(i++);
  for (auto* b : buffers()) b->value = snap.at(i++);
}

LossEval batch_loss(Model& model, const Mat& windows, int batch, const Mat& targets, ViewSet views,
                    LossDirection direction, Mode mode, Rng* rng, bool backward, ModelCache* cache) {
  ModelCache local;
  ModelCache* c = backward ? (cache ? cache : &local) : cache;
  const HierarchicalFeatures f = model.forward(windows, batch, mode, rng, c);
  const Mat feats = concat_views(f, views);
  const Mat tgt = select_segments(targets, views);
  const double ls = model.logit_scale.value(0, 0);
  const InfoNceResult r = infonce_loss(feats, tgt, ls, direction, backward);

  if (backward) {
    const Eigen::Index d = f.contour.cols();
    HierarchicalFeatures df;
    Eigen::Index off = 0;
    for (int v = 0; v < 3; ++v) {
      if (views.on[v]) {
        df.view(v) = r.d_features.middleCols(off, d);
        off += d;
      } else {
        df.view(v) = Mat::Zero(f.view(v).rows(), d);
      }
    }
    model.logit_scale.grad(0, 0) += static_cast<Real>(r.d_logit_scale);
    model.backward(*c, df);
  }
  return {r.loss, ls};
}

}  // namespace hiervis
