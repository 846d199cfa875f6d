#include "hiervis/training.hpp"

#include "hiervis/tensor_file.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

namespace hiervis {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

Rng stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

// Shortest decimal that reads back as the same float, so configs stay readable.
double json_float(float v) {
  char buf[32];
  for (int prec = 6; prec <= 9; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, static_cast<double>(v));
    const double d = std::strtod(buf, nullptr);
    if (static_cast<float>(d) == v) return d;
  }
  return static_cast<double>(v);
}

void reject_unknown(const json& j, const json& defaults, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw Error(ErrorKind::config, where + ": unknown key '" + it.key() + "'");
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::config, where + "." + key + ": wrong type");
  }
}

std::string rng_digest(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return sha256_hex(os.str());
}

}  // namespace

std::string to_string(LossDirection d) { return d == LossDirection::eeg_to_img ? "eeg_to_img" : "symmetric"; }

LossDirection parse_direction(const std::string& s) {
  if (s == "eeg_to_img") return LossDirection::eeg_to_img;
  if (s == "symmetric") return LossDirection::symmetric;
  throw Error(ErrorKind::config, "unknown loss direction '" + s + "'");
}

std::string to_string(PoolMode m) { return m == PoolMode::single ? "single" : "two_stage"; }

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "single") return PoolMode::single;
  if (s == "two_stage") return PoolMode::two_stage;
  throw Error(ErrorKind::config, "unknown pool mode '" + s + "'");
}

std::string to_string(KvSource k) { return k == KvSource::lower ? "lower" : "value_from_query"; }

KvSource parse_kv_source(const std::string& s) {
  if (s == "lower") return KvSource::lower;
  if (s == "value_from_query") return KvSource::value_from_query;
  throw Error(ErrorKind::config, "unknown kv_source '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::config, "learning_rate must be finite and >= 0");
  }
  if (batch_size < 2) throw Error(ErrorKind::config, "batch_size must be at least 2");
  if (max_epochs < 1) throw Error(ErrorKind::config, "max_epochs must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error(ErrorKind::config, "adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw Error(ErrorKind::config, "adam_eps must be positive");
  if (n_repeats < 1) throw Error(ErrorKind::config, "n_repeats must be positive");
  if (val_size < 0) throw Error(ErrorKind::config, "val_size must be >= 0");
  if (!(grad_clip >= 0.0)) throw Error(ErrorKind::config, "grad_clip must be >= 0");
  if (views.count() == 0) throw Error(ErrorKind::config, "at least one view must be selected");
}

PairedTrials make_pairs(const EEGTrialArray& eeg, const Mat& embeddings, const STConvParams& p) {
  if (eeg.n_channels != p.channels || eeg.n_times != p.timepoints) {
    throw Error(ErrorKind::shape, "EEG is " + std::to_string(eeg.n_channels) + "x" + std::to_string(eeg.n_times) +
                                      " but the encoder expects " + std::to_string(p.channels) + "x" +
                                      std::to_string(p.timepoints));
  }
  PairedTrials out;
  out.windows = window_trials(eeg, p);
  out.targets.resize(eeg.n_trials, embeddings.cols());
  for (int i = 0; i < eeg.n_trials; ++i) {
    const int img = eeg.image_ids.at(static_cast<std::size_t>(i));
    if (img < 0 || img >= embeddings.rows()) {
      throw Error(ErrorKind::format, "trial " + std::to_string(i) + " references image " + std::to_string(img) +
                                         " outside the embedding table");
    }
    out.targets.row(i) = embeddings.row(img);
  }
  out.concept_ids = eeg.concept_ids;
  out.image_ids = eeg.image_ids;
  return out;
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.push_back(MatD::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(MatD::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    const MatD g = p.grad.cast<double>();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const MatD update = (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_);
    p.value = (p.value.cast<double>() - lr_ * update).cast<Real>();
  }
}

double clip_grad_norm(std::span<Param* const> params, double max_norm) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto s = static_cast<Real>(max_norm / norm);
    for (Param* p : params) p->grad *= s;
  }
  return norm;
}

json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"wall_ms", r.wall_ms}};
}

namespace {

Mat gather_rows(const Mat& m, std::span<const int> idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

// Contiguous batches of `b`; a trailing singleton joins the previous batch.
std::vector<std::pair<int, int>> eval_batches(int n, int b) {
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s < n; s += b) out.emplace_back(s, std::min(n, s + b));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

}  // namespace

double evaluate_loss(Model& model, const PairedTrials& set, int batch_size, ViewSet views, LossDirection direction) {
  if (set.size() < 2) throw Error(ErrorKind::invalid_argument, "evaluate_loss: need at least 2 trials");
  double total = 0.0;
  for (const auto& [s, e] : eval_batches(set.size(), std::max(2, batch_size))) {
    std::vector<int> idx(static_cast<std::size_t>(e - s));
    std::iota(idx.begin(), idx.end(), s);
    const Mat w = set.windows.gather(idx);
    const Mat t = set.targets.middleRows(s, e - s);
    const LossEval r = batch_loss(model, w, e - s, t, views, direction, Mode::eval, nullptr, false);
    total += r.loss * (e - s);
  }
  return total / set.size();
}

TrainResult train(Model model, const PairedTrials& train_set, const PairedTrials& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  const int n = train_set.size();
  if (n < 2) throw Error(ErrorKind::invalid_argument, "train: need at least 2 training trials");
  const int b = std::min(cfg.batch_size, n);
  const bool has_val = val_set.size() >= 2;

  Rng shuffle_rng = stream_rng(cfg.seed, 1);
  Rng dropout_rng = stream_rng(cfg.seed, 2);
  auto params = model.params();
  Adam adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

  TrainResult result;
  std::vector<Mat> best;
  const double diverge_at = 10.0 * std::log(static_cast<double>(b));
  int diverged_epochs = 0;
  bool warned = false;
  std::vector<int> perm(static_cast<std::size_t>(n));
  ModelCache cache;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);

    double loss_sum = 0.0;
    int seen = 0;
    int batch_index = 0;
    for (int s = 0; s < n; s += b, ++batch_index) {
      const int e = std::min(n, s + b);
      if (e - s < 2) continue;  // a singleton has no negatives
      const std::span<const int> idx(perm.data() + s, static_cast<std::size_t>(e - s));
      const Mat w = train_set.windows.gather(idx);
      const Mat t = gather_rows(train_set.targets, idx);
      model.zero_grad();
      const LossEval r =
          batch_loss(model, w, e - s, t, cfg.views, cfg.direction, Mode::train, &dropout_rng, true, &cache);
      if (!std::isfinite(r.loss)) {
        throw Error(ErrorKind::numeric, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                            std::to_string(batch_index));
      }
      model.update_running_stats(cache);
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
      adam.step();
      auto& ls = model.logit_scale.value(0, 0);
      ls = std::min(ls, static_cast<Real>(kMaxLogitScale));
      loss_sum += r.loss * (e - s);
      seen += e - s;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / std::max(1, seen);
    rec.val_loss = has_val ? evaluate_loss(model, val_set, b, cfg.views, cfg.direction) : rec.train_loss;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (!std::isfinite(rec.val_loss)) {
      throw Error(ErrorKind::numeric, "non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    diverged_epochs = rec.train_loss > diverge_at ? diverged_epochs + 1 : 0;
    if (diverged_epochs >= 3 && !warned) {
      warned = true;
      const std::string msg = "training loss above 10*ln(batch) for 3 consecutive epochs (epoch " +
                              std::to_string(epoch) + "); the run may be diverging";
      spdlog::warn(msg);
      result.warnings.push_back(msg);
    }

    if (result.best_epoch < 0 || rec.val_loss < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
      result.rng_digest = rng_digest(shuffle_rng);
      best = model.snapshot();
    }
  }
  model.restore(best);
  result.model = std::move(model);
  return result;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"seed", c.seed},                   {"beta1", c.beta1},           {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},           {"n_repeats", c.n_repeats},   {"val_size", c.val_size},
          {"grad_clip", c.grad_clip},         {"direction", to_string(c.direction)}, {"views", c.views.name()}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  const std::string w = "training";
  reject_unknown(j, to_json(c), w);
  c.learning_rate = get_or(j, "learning_rate", c.learning_rate, w);
  c.batch_size = get_or(j, "batch_size", c.batch_size, w);
  c.max_epochs = get_or(j, "max_epochs", c.max_epochs, w);
  c.seed = get_or(j, "seed", c.seed, w);
  c.beta1 = get_or(j, "beta1", c.beta1, w);
  c.beta2 = get_or(j, "beta2", c.beta2, w);
  c.adam_eps = get_or(j, "adam_eps", c.adam_eps, w);
  c.n_repeats = get_or(j, "n_repeats", c.n_repeats, w);
  c.val_size = get_or(j, "val_size", c.val_size, w);
  c.grad_clip = get_or(j, "grad_clip", c.grad_clip, w);
  c.direction = parse_direction(get_or(j, "direction", to_string(c.direction), w));
  c.views = ViewSet::parse(get_or(j, "views", c.views.name(), w));
  c.validate();
  return c;
}

namespace {

json encoder_json(const STConvParams& p) {
  return {{"channels", p.channels},
          {"timepoints", p.timepoints},
          {"temporal_kernel", p.temporal_kernel},
          {"temporal_stride", p.temporal_stride},
          {"pool_kernel", p.pool_kernel},
          {"pool_stride", p.pool_stride},
          {"pool_mode", to_string(p.pool_mode)},
          {"n_filters", p.n_filters},
          {"proj_dim", p.proj_dim},
          {"dropout", json_float(p.dropout)},
          {"bn_eps", json_float(p.bn_eps)},
          {"bn_momentum", json_float(p.bn_momentum)},
          {"elu_alpha", json_float(p.elu_alpha)}};
}

json attention_json(const AttentionParams& p) {
  return {{"heads", p.heads},
          {"head_dim", p.head_dim},
          {"scale_denominator", json_float(p.scale_denominator)},
          {"n_layers", p.n_layers},
          {"dropout", json_float(p.dropout)},
          {"kv_source", to_string(p.kv_source)},
          {"enabled", p.enabled},
          {"ln_eps", json_float(p.ln_eps)}};
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"encoder", encoder_json(c.encoder)},
          {"attention", attention_json(c.attention)},
          {"embed_dim", c.embed_dim},
          {"init_logit_scale", json_float(c.init_logit_scale)}};
}

namespace {

STConvParams encoder_from_json(const json& j) {
  STConvParams p;
  const std::string w = "encoder";
  reject_unknown(j, encoder_json(p), w);
  p.channels = get_or(j, "channels", p.channels, w);
  p.timepoints = get_or(j, "timepoints", p.timepoints, w);
  p.temporal_kernel = get_or(j, "temporal_kernel", p.temporal_kernel, w);
  p.temporal_stride = get_or(j, "temporal_stride", p.temporal_stride, w);
  p.pool_kernel = get_or(j, "pool_kernel", p.pool_kernel, w);
  p.pool_stride = get_or(j, "pool_stride", p.pool_stride, w);
  p.pool_mode = parse_pool_mode(get_or(j, "pool_mode", to_string(p.pool_mode), w));
  p.n_filters = get_or(j, "n_filters", p.n_filters, w);
  p.proj_dim = get_or(j, "proj_dim", p.proj_dim, w);
  p.dropout = get_or(j, "dropout", p.dropout, w);
  p.bn_eps = get_or(j, "bn_eps", p.bn_eps, w);
  p.bn_momentum = get_or(j, "bn_momentum", p.bn_momentum, w);
  p.elu_alpha = get_or(j, "elu_alpha", p.elu_alpha, w);
  return p;
}

AttentionParams attention_from_json(const json& j) {
  AttentionParams p;
  const std::string w = "attention";
  reject_unknown(j, attention_json(p), w);
  p.heads = get_or(j, "heads", p.heads, w);
  p.head_dim = get_or(j, "head_dim", p.head_dim, w);
  p.scale_denominator = get_or(j, "scale_denominator", p.scale_denominator, w);
  p.n_layers = get_or(j, "n_layers", p.n_layers, w);
  p.dropout = get_or(j, "dropout", p.dropout, w);
  p.kv_source = parse_kv_source(get_or(j, "kv_source", to_string(p.kv_source), w));
  p.enabled = get_or(j, "enabled", p.enabled, w);
  p.ln_eps = get_or(j, "ln_eps", p.ln_eps, w);
  return p;
}

}  // namespace

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  reject_unknown(j, to_json(c), "model");
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  if (j.contains("attention")) c.attention = attention_from_json(j.at("attention"));
  c.embed_dim = get_or(j, "embed_dim", c.embed_dim, "model");
  c.init_logit_scale = get_or(j, "init_logit_scale", c.init_logit_scale, "model");
  c.validate();
  return c;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  Model model = ckpt.model;
  json tensors = json::array();
  auto put = [&](const std::string& name, const Mat& value) {
    const Tensor t = to_tensor(name, value);
    const std::string bytes = encode_tensor(t);
    const std::string file = name + ".tensor";
    write_file_atomic(dir / file, bytes);
    tensors.push_back({{"name", name}, {"file", file}, {"shape", t.shape}, {"sha256", sha256_hex(bytes)}});
  };
  for (auto* p : model.params()) put(p->name, p->value);
  for (auto* b : model.buffers()) put(b->name, b->value);

  json m;
  m["format_version"] = kCheckpointVersion;
  m["model_config"] = to_json(model.config());
  m["train_config"] = to_json(ckpt.train_config);
  m["epoch"] = ckpt.epoch;
  m["val_loss"] = ckpt.val_loss;
  m["rng_digest"] = ckpt.rng_digest;
  m["tensors"] = tensors;
  m["extra"] = ckpt.extra;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json m;
  try {
    m = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, manifest_path.string() + ": " + e.what());
  }
  const int version = m.value("format_version", -1);
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::format, "checkpoint " + dir.string() + " has format_version " + std::to_string(version) +
                                       ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint ck;
  ck.model = Model(model_config_from_json(m.at("model_config")));
  ck.train_config = train_config_from_json(m.at("train_config"));
  ck.epoch = m.at("epoch").get<int>();
  ck.val_loss = m.at("val_loss").get<double>();
  ck.rng_digest = m.at("rng_digest").get<std::string>();
  ck.extra = m.value("extra", json::object());

  std::map<std::string, std::pair<std::string, std::string>> files;  // name -> (file, sha256)
  for (const auto& t : m.at("tensors")) {
    files[t.at("name").get<std::string>()] = {t.at("file").get<std::string>(), t.value("sha256", "")};
  }
  auto get = [&](const std::string& name, Mat& dst) {
    const auto it = files.find(name);
    if (it == files.end()) throw Error(ErrorKind::format, "checkpoint is missing tensor '" + name + "'");
    const auto& [file, digest] = it->second;
    const std::string bytes = read_file(dir / file);
    if (!digest.empty() && sha256_hex(bytes) != digest) {
      throw Error(ErrorKind::format, "checkpoint tensor " + (dir / file).string() + " does not match its sha256");
    }
    const Tensor t = decode_tensor(bytes, (dir / file).string());
    if (t.shape.size() != 2 || t.shape[0] != dst.rows() || t.shape[1] != dst.cols()) {
      throw Error(ErrorKind::shape, "checkpoint tensor '" + name + "' has the wrong shape");
    }
    dst = to_mat(t, dst.rows(), dst.cols());
  };
  for (auto* p : ck.model.params()) get(p->name, p->value);
  for (auto* b : ck.model.buffers()) get(b->name, b->value);
  return ck;
}

}  // namespace hiervis
