#include "hiervis/evaluation.hpp"

#include "hiervis/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hiervis {

using json = nlohmann::json;

namespace {

MatD cosine_scores(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::shape, "retrieval: query and gallery widths differ");
  MatD ad = a.cast<double>();
  MatD bd = b.cast<double>();
  for (Eigen::Index i = 0; i < ad.rows(); ++i) {
    const double n = ad.row(i).norm();
    if (!(n > 0.0)) throw Error(ErrorKind::numeric, "retrieval: query row " + std::to_string(i) + " has zero norm");
    ad.row(i) /= n;
  }
  for (Eigen::Index i = 0; i < bd.rows(); ++i) {
    const double n = bd.row(i).norm();
    if (!(n > 0.0)) throw Error(ErrorKind::numeric, "retrieval: gallery row " + std::to_string(i) + " has zero norm");
    bd.row(i) /= n;
  }
  // Per-pair dot products rather than one GEMM: a score must not depend on where its rows
  // sit in the batch, or duplicated gallery entries stop tying exactly.
  MatD s(ad.rows(), bd.rows());
  for (Eigen::Index i = 0; i < ad.rows(); ++i)
    for (Eigen::Index j = 0; j < bd.rows(); ++j) s(i, j) = ad.row(i).dot(bd.row(j));
  return s;
}

}  // namespace

int rank_of(std::span<const double> scores, int truth) {
  if (truth < 0 || static_cast<std::size_t>(truth) >= scores.size()) {
    throw Error(ErrorKind::invalid_argument, "rank_of: truth index out of range");
  }
  const double s = scores[static_cast<std::size_t>(truth)];
  int rank = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > s || (scores[j] == s && static_cast<int>(j) < truth)) ++rank;
  }
  return rank;
}

std::map<int, double> topk_accuracy(const Mat& queries, const Mat& gallery, std::span<const int> truth,
                                    std::span<const int> ks) {
  if (static_cast<Eigen::Index>(truth.size()) != queries.rows()) {
    throw Error(ErrorKind::shape, "topk: one truth index per query required");
  }
  if (queries.rows() == 0) throw Error(ErrorKind::invalid_argument, "topk: no queries");
  for (int k : ks) {
    if (k < 1) throw Error(ErrorKind::invalid_argument, "topk: k must be positive");
  }
  const MatD s = cosine_scores(queries, gallery);
  std::map<int, double> hits;
  for (int k : ks) hits[k] = 0.0;
  std::vector<double> row(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) row[static_cast<std::size_t>(j)] = s(i, j);
    const int r = rank_of(row, truth[static_cast<std::size_t>(i)]);
    for (int k : ks)
      if (r < k) hits[k] += 1.0;
  }
  for (auto& [k, h] : hits) h /= static_cast<double>(s.rows());
  return hits;
}

std::vector<std::vector<int>> ranked_lists(const Mat& queries, const Mat& gallery, int top_n) {
  const MatD s = cosine_scores(queries, gallery);
  const int n = std::min<int>(top_n, static_cast<int>(s.cols()));
  std::vector<std::vector<int>> out;
  std::vector<int> idx(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return s(i, a) > s(i, b); });
    out.emplace_back(idx.begin(), idx.begin() + n);
  }
  return out;
}

HierarchicalFeatures extract_features(const Model& model, const WindowedTrials& windows, int batch_size) {
  const int n = windows.n_trials;
  const int d = model.config().embed_dim;
  HierarchicalFeatures out{Mat(n, d), Mat(n, d), Mat(n, d)};
  for (int s = 0; s < n; s += batch_size) {
    const int e = std::min(n, s + batch_size);
    std::vector<int> idx(static_cast<std::size_t>(e - s));
    std::iota(idx.begin(), idx.end(), s);
    const HierarchicalFeatures f = model.forward(windows.gather(idx), e - s, Mode::eval, nullptr, nullptr);
    for (int v = 0; v < 3; ++v) out.view(v).middleRows(s, e - s) = f.view(v);
  }
  return out;
}

ViewRetrieval per_view_retrieval(const HierarchicalFeatures& features, const Mat& gallery_triple,
                                 std::span<const int> truth, ViewSet views, std::span<const int> ks, int top_n) {
  ViewRetrieval r;
  r.view = views.name();
  const Mat q = concat_views(features, views);
  const Mat g = select_segments(gallery_triple, views);
  r.topk = topk_accuracy(q, g, truth, ks);
  r.top_lists = ranked_lists(q, g, top_n);
  return r;
}

RSMatrix compute_rsm(const Mat& features, std::span<const std::string> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw Error(ErrorKind::shape, "rsm: one category label per row required");
  }
  const auto& cats = category_order();
  std::vector<int> cat_index(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = std::find(cats.begin(), cats.end(), labels[i]);
    if (it == cats.end()) throw Error(ErrorKind::invalid_argument, "rsm: unknown category '" + labels[i] + "'");
    cat_index[i] = static_cast<int>(it - cats.begin());
  }
  RSMatrix r;
  r.order.resize(labels.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(), [&](int a, int b) { return cat_index[a] < cat_index[b]; });

  Mat ordered(features.rows(), features.cols());
  for (std::size_t p = 0; p < r.order.size(); ++p) {
    ordered.row(static_cast<Eigen::Index>(p)) = features.row(r.order[p]);
    r.labels.push_back(labels[static_cast<std::size_t>(r.order[p])]);
    if (p == 0 || r.labels[p] != r.labels[p - 1]) r.blocks.emplace_back(r.labels[p], static_cast<int>(p));
  }
  r.values = cosine_scores(ordered, ordered).cast<Real>();
  return r;
}

ParameterCount count_parameters(Model& model) {
  ParameterCount c;
  for (const Param* p : model.params()) {
    const long long n = p->size();
    c.tensors.push_back({p->name, n});
    c.total += n;
    // Module = first two name components ("encoder.object", "cahi.object_to_context", "head.context").
    std::string module = p->name;
    const auto first = module.find('.');
    if (first != std::string::npos) {
      const auto second = module.find('.', first + 1);
      if (second != std::string::npos) module.resize(second);
    }
    if (c.modules.empty() || c.modules.back().name != module) c.modules.push_back({module, 0});
    c.modules.back().count += n;
  }
  return c;
}

long long count_parameters(const ModelConfig& cfg) {
  Model m(cfg);
  return count_parameters(m).total;
}

json accounting_report(const ModelConfig& cfg) {
  Model model(cfg);
  const ParameterCount pc = count_parameters(model);
  const long long base = pc.total;
  const int m = cfg.encoder.proj_dim;
  const int f = cfg.encoder.n_filters;
  const int d = cfg.embed_dim;
  const int h = cfg.attention.heads;
  const int dk = cfg.attention.resolved_head_dim(m);
  const int blocks = cfg.attention.integrates() ? 2 * cfg.attention.n_layers : 0;

  json items = json::array();
  long long reconciled = base;
  auto add = [&](const std::string& name, const std::string& decision, long long delta, bool summed) {
    items.push_back({{"name", name}, {"design_decision", decision}, {"delta", delta}, {"included_in_reconciliation", summed}});
    if (summed) reconciled += delta;
  };

  ModelConfig long_epoch = cfg;
  long_epoch.encoder.timepoints = 250;
  add("epoch_length",
      "EEG epochs of T=" + std::to_string(cfg.encoder.timepoints) +
          " samples; a 250-sample epoch gives L=36 tokens and a wider flatten map",
      count_parameters(long_epoch) - base, true);
  add("conv_bias_before_batchnorm", "temporal and spatial convolutions carry no bias ahead of batch norm",
      3LL * 2 * f, true);
  add("projection_head",
      "per-view head is flatten + one linear map; a residual MLP head (d x d linear + LayerNorm) would add this",
      3LL * (static_cast<long long>(d) * d + d + 2LL * d), true);
  add("attention_qkv_bias", "query/key/value projections have no bias", static_cast<long long>(blocks) * 3 * h * dk,
      true);

  ModelConfig wide = cfg;
  wide.attention.head_dim = m;
  add("attention_head_width",
      "head_dim = floor(m/h) = " + std::to_string(dk) + "; full-width heads (head_dim = m) would add this",
      count_parameters(wide) - base, false);

  json modules = json::array();
  for (const auto& mc : pc.modules) modules.push_back({{"module", mc.name}, {"count", mc.count}});
  json report;
  report["total"] = base;
  report["reference_total"] = kReferenceParameterCount;
  report["delta"] = base - kReferenceParameterCount;
  report["modules"] = modules;
  report["assumptions"] = items;
  report["reconciled_total"] = reconciled;
  report["unexplained_residual"] = kReferenceParameterCount - reconciled;
  report["model_config"] = {{"timepoints", cfg.encoder.timepoints}, {"tokens", cfg.encoder.token_count()},
                            {"model_dim", m},                       {"heads", h},
                            {"head_dim", dk},                       {"embed_dim", d}};
  return report;
}

FlopEstimate estimate_flops(const ModelConfig& cfg) {
  const auto& p = cfg.encoder;
  const long long C = p.channels, F = p.n_filters, K = p.temporal_kernel, m = p.proj_dim;
  const long long T1 = p.conv_width();
  const long long L = p.token_count();
  const long long h = cfg.attention.heads;
  const long long dk = cfg.attention.resolved_head_dim(p.proj_dim);
  const long long H = h * dk;
  const long long d = cfg.embed_dim;

  FlopEstimate e;
  const char* views[3] = {"contour", "object", "context"};
  for (const char* v : views) {
    const std::string s = std::string("encoder.") + v;
    e.layers.push_back({s + ".temporal_conv", F * C * T1 * K});
    e.layers.push_back({s + ".spatial_conv", F * C * F * L});
    e.layers.push_back({s + ".proj", m * F * L});
  }
  if (cfg.attention.integrates()) {
    for (const char* dir : {"contour_to_object", "object_to_context"}) {
      for (int k = 0; k < cfg.attention.n_layers; ++k) {
        const std::string s = std::string("cahi.") + dir + "." + std::to_string(k);
        e.layers.push_back({s + ".qkv", 3 * L * m * H});
        e.layers.push_back({s + ".scores", h * L * L * dk});
        e.layers.push_back({s + ".weighted_sum", h * L * L * dk});
        e.layers.push_back({s + ".out", L * H * m});
      }
    }
  }
  for (const char* v : views) e.layers.push_back({std::string("head.") + v, d * L * m});
  for (const auto& l : e.layers) e.macs += l.macs;
  e.flops = 2 * e.macs;
  return e;
}

json to_json(const FlopEstimate& f) {
  json layers = json::array();
  for (const auto& l : f.layers) layers.push_back({{"layer", l.name}, {"macs", l.macs}});
  return {{"convention", "1 MAC = 2 FLOPs; convolutions (unfused temporal conv), linear maps and attention "
                         "products counted; normalisation, activations, pooling and softmax excluded; one trial"},
          {"layers", layers},
          {"macs", f.macs},
          {"flops", f.flops},
          {"reference_flops", kReferenceFlops}};
}

}  // namespace hiervis
