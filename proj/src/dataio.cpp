#include "hiervis/dataio.hpp"

#include "hiervis/tensor_file.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

namespace hiervis {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error(ErrorKind::format, "unknown split '" + s + "'");
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

void EEGTrialArray::validate() const {
  if (n_trials < 1 || n_channels < 1 || n_times < 1) {
    throw Error(ErrorKind::format, "EEG array needs N, C, T >= 1 (got " + std::to_string(n_trials) + ", " +
                                       std::to_string(n_channels) + ", " + std::to_string(n_times) + ")");
  }
  if (sampling_rate_hz < 1) throw Error(ErrorKind::format, "sampling rate must be positive");
  if (data.size() != trial_size() * n_trials) throw Error(ErrorKind::format, "EEG payload size does not match N x C x T");
  auto check_len = [&](std::size_t len, const char* what) {
    if (len != static_cast<std::size_t>(n_trials)) {
      throw Error(ErrorKind::format, std::string(what) + " length " + std::to_string(len) + " != n_trials " +
                                         std::to_string(n_trials));
    }
  };
  check_len(concept_ids.size(), "concept_ids");
  check_len(image_ids.size(), "image_ids");
  check_len(repeat_index.size(), "repeat_index");
  if (channel_labels.size() != static_cast<std::size_t>(n_channels)) {
    throw Error(ErrorKind::format, "channel_labels length does not match channel count");
  }
  for (int i = 0; i < n_trials; ++i) {
    const float* p = trial(i);
    for (std::size_t k = 0; k < trial_size(); ++k) {
      if (!std::isfinite(p[k])) {
        throw Error(ErrorKind::format, "non-finite sample in trial " + std::to_string(i));
      }
    }
  }
}

void StimulusCatalog::validate() const {
  std::set<int> seen;
  std::set<int> images;
  for (const auto& c : concepts) {
    if (!seen.insert(c.concept_id).second) {
      throw Error(ErrorKind::format, "duplicate concept id " + std::to_string(c.concept_id));
    }
    const auto& cats = category_order();
    if (std::find(cats.begin(), cats.end(), c.class_label) == cats.end()) {
      throw Error(ErrorKind::format, "unknown class label '" + c.class_label + "'");
    }
    for (int img : c.image_ids) {
      if (!images.insert(img).second) {
        throw Error(ErrorKind::format, "image id " + std::to_string(img) + " listed under two concepts");
      }
    }
  }
}

const ConceptEntry& StimulusCatalog::entry(int concept_id) const {
  for (const auto& c : concepts) {
    if (c.concept_id == concept_id) return c;
  }
  throw Error(ErrorKind::invalid_argument, "concept " + std::to_string(concept_id) + " not in catalog");
}

std::vector<int> StimulusCatalog::concept_ids(Split s) const {
  std::vector<int> out;
  for (const auto& c : concepts) {
    if (c.split == s) out.push_back(c.concept_id);
  }
  return out;
}

int StimulusCatalog::n_images() const {
  int n = 0;
  for (const auto& c : concepts) {
    for (int img : c.image_ids) n = std::max(n, img + 1);
  }
  return n;
}

json StimulusCatalog::to_json() const {
  json arr = json::array();
  for (const auto& c : concepts) {
    arr.push_back({{"concept_id", c.concept_id},
                   {"split", std::string(to_string(c.split))},
                   {"image_ids", c.image_ids},
                   {"class_label", c.class_label}});
  }
  return json{{"concepts", arr}};
}

StimulusCatalog StimulusCatalog::from_json(const json& j) {
  StimulusCatalog cat;
  try {
    for (const auto& e : j.at("concepts")) {
      ConceptEntry c;
      c.concept_id = e.at("concept_id").get<int>();
      c.split = parse_split(e.at("split").get<std::string>());
      c.image_ids = e.at("image_ids").get<std::vector<int>>();
      c.class_label = e.value("class_label", std::string("Other"));
      cat.concepts.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, std::string("malformed catalog: ") + e.what());
  }
  cat.validate();
  return cat;
}

std::vector<std::string> DatasetLayout::subjects() const {
  std::vector<std::string> out;
  if (!fs::is_directory(root)) throw Error(ErrorKind::io, "dataset root " + root.string() + " does not exist");
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (entry.is_directory() && name.rfind("sub-", 0) == 0) out.push_back(name);
  }
  std::sort(out.begin(), out.end());
  return out;
}

EEGTrialArray load_eeg(const fs::path& split_dir) {
  const auto tensor_path = split_dir / "eeg.tensor";
  const auto meta_path = split_dir / "trials.json";
  if (!fs::exists(tensor_path)) throw Error(ErrorKind::io, "missing file " + tensor_path.string());
  if (!fs::exists(meta_path)) throw Error(ErrorKind::io, "missing file " + meta_path.string());

  Tensor t = read_tensor(tensor_path);
  if (t.shape.size() != 3) {
    throw Error(ErrorKind::format, tensor_path.string() + ": expected a 3-d [trials x channels x time] tensor");
  }

  EEGTrialArray eeg;
  eeg.n_trials = static_cast<int>(t.shape[0]);
  eeg.n_channels = static_cast<int>(t.shape[1]);
  eeg.n_times = static_cast<int>(t.shape[2]);
  eeg.data = std::move(t.data);

  json meta;
  try {
    meta = json::parse(read_file(meta_path));
    eeg.sampling_rate_hz = meta.at("sampling_rate_hz").get<int>();
    eeg.channel_labels = meta.at("channel_labels").get<std::vector<std::string>>();
    eeg.concept_ids = meta.at("concept_ids").get<std::vector<int>>();
    eeg.image_ids = meta.at("image_ids").get<std::vector<int>>();
    eeg.repeat_index = meta.at("repeat_index").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, meta_path.string() + ": " + e.what());
  }
  try {
    eeg.validate();
  } catch (const Error& e) {
    throw Error(e.kind(), split_dir.string() + ": " + e.what());
  }
  eeg.provenance = {{"source", split_dir.string()},
                    {"n_channels", eeg.n_channels},
                    {"n_times", eeg.n_times},
                    {"sampling_rate_hz", eeg.sampling_rate_hz}};
  return eeg;
}

EEGTrialArray load_eeg(const DatasetLayout& layout, const std::string& subject, Split s) {
  return load_eeg(layout.split_dir(subject, s));
}

void save_eeg(const fs::path& split_dir, const EEGTrialArray& eeg) {
  eeg.validate();
  Tensor t;
  t.name = "eeg";
  t.shape = {eeg.n_trials, eeg.n_channels, eeg.n_times};
  t.data = eeg.data;
  write_tensor(split_dir / "eeg.tensor", t);
  json meta = {{"sampling_rate_hz", eeg.sampling_rate_hz},
               {"channel_labels", eeg.channel_labels},
               {"concept_ids", eeg.concept_ids},
               {"image_ids", eeg.image_ids},
               {"repeat_index", eeg.repeat_index}};
  write_file_atomic(split_dir / "trials.json", meta.dump());
}

StimulusCatalog load_catalog(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
  return StimulusCatalog::from_json(j);
}

void save_catalog(const fs::path& path, const StimulusCatalog& catalog) {
  write_file_atomic(path, catalog.to_json().dump(1));
}

EEGTrialArray average_repeats(const EEGTrialArray& eeg) {
  std::map<std::pair<int, int>, int> group_of;
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < eeg.n_trials; ++i) {
    auto key = std::make_pair(eeg.concept_ids[i], eeg.image_ids[i]);
    auto [it, inserted] = group_of.emplace(key, static_cast<int>(groups.size()));
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }

  EEGTrialArray out;
  out.n_trials = static_cast<int>(groups.size());
  out.n_channels = eeg.n_channels;
  out.n_times = eeg.n_times;
  out.sampling_rate_hz = eeg.sampling_rate_hz;
  out.channel_labels = eeg.channel_labels;
  out.provenance = eeg.provenance;
  out.data.assign(out.trial_size() * out.n_trials, 0.0f);

  std::set<std::size_t> sizes;
  std::vector<double> acc(eeg.trial_size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& members = groups[g];
    sizes.insert(members.size());
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int i : members) {
      const float* p = eeg.trial(i);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += p[k];
    }
    float* dst = out.trial(static_cast<int>(g));
    const double inv = 1.0 / static_cast<double>(members.size());
    for (std::size_t k = 0; k < acc.size(); ++k) dst[k] = static_cast<float>(acc[k] * inv);
    out.concept_ids.push_back(eeg.concept_ids[members.front()]);
    out.image_ids.push_back(eeg.image_ids[members.front()]);
    out.repeat_index.push_back(0);
  }

  if (sizes.size() > 1) {
    const std::string msg = "average_repeats: inconsistent repeat counts (min " + std::to_string(*sizes.begin()) +
                            ", max " + std::to_string(*sizes.rbegin()) + "); averaged over available repeats";
    spdlog::warn(msg);
    out.provenance["warnings"].push_back(msg);
  }
  out.provenance["repeats_averaged"] = true;
  return out;
}

EEGTrialArray select_trials(const EEGTrialArray& eeg, std::span<const int> indices) {
  EEGTrialArray out;
  out.n_trials = static_cast<int>(indices.size());
  out.n_channels = eeg.n_channels;
  out.n_times = eeg.n_times;
  out.sampling_rate_hz = eeg.sampling_rate_hz;
  out.channel_labels = eeg.channel_labels;
  out.provenance = eeg.provenance;
  out.data.resize(out.trial_size() * indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const int i = indices[j];
    if (i < 0 || i >= eeg.n_trials) throw Error(ErrorKind::invalid_argument, "trial index out of range");
    std::copy_n(eeg.trial(i), eeg.trial_size(), out.trial(static_cast<int>(j)));
    out.concept_ids.push_back(eeg.concept_ids[i]);
    out.image_ids.push_back(eeg.image_ids[i]);
    out.repeat_index.push_back(eeg.repeat_index[i]);
  }
  return out;
}

EEGTrialArray concat_trials(std::span<const EEGTrialArray> parts) {
  if (parts.empty()) throw Error(ErrorKind::invalid_argument, "concat_trials needs at least one array");
  EEGTrialArray out;
  out.n_channels = parts[0].n_channels;
  out.n_times = parts[0].n_times;
  out.sampling_rate_hz = parts[0].sampling_rate_hz;
  out.channel_labels = parts[0].channel_labels;
  out.provenance = parts[0].provenance;
  for (const auto& p : parts) {
    if (p.n_channels != out.n_channels || p.n_times != out.n_times) {
      throw Error(ErrorKind::shape, "concat_trials: channel/time dimensions differ between arrays");
    }
    out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    out.concept_ids.insert(out.concept_ids.end(), p.concept_ids.begin(), p.concept_ids.end());
    out.image_ids.insert(out.image_ids.end(), p.image_ids.begin(), p.image_ids.end());
    out.repeat_index.insert(out.repeat_index.end(), p.repeat_index.begin(), p.repeat_index.end());
    out.n_trials += p.n_trials;
  }
  return out;
}

EEGTrialArray select_split(const EEGTrialArray& eeg, const StimulusCatalog& catalog, Split s) {
  std::set<int> wanted;
  for (int c : catalog.concept_ids(s)) wanted.insert(c);
  std::vector<int> idx;
  for (int i = 0; i < eeg.n_trials; ++i) {
    if (wanted.count(eeg.concept_ids[i])) idx.push_back(i);
  }
  return select_trials(eeg, idx);
}

TrainValSplit split_validation(const EEGTrialArray& eeg, int n_val, std::uint64_t seed) {
  if (n_val < 0 || n_val >= eeg.n_trials) {
    throw Error(ErrorKind::invalid_argument, "invalid split: n_val=" + std::to_string(n_val) +
                                                 " must satisfy 0 <= n_val < N=" + std::to_string(eeg.n_trials));
  }
  std::vector<int> perm(eeg.n_trials);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, 0x5eed);
  std::shuffle(perm.begin(), perm.end(), rng);

  TrainValSplit out;
  out.val_indices.assign(perm.begin(), perm.begin() + n_val);
  out.train_indices.assign(perm.begin() + n_val, perm.end());
  std::sort(out.val_indices.begin(), out.val_indices.end());
  std::sort(out.train_indices.begin(), out.train_indices.end());
  out.train = select_trials(eeg, out.train_indices);
  out.val = select_trials(eeg, out.val_indices);
  return out;
}

std::vector<LosoFold> loso_folds(int n_subjects) {
  if (n_subjects < 2) {
    throw Error(ErrorKind::protocol, "leave-one-subject-out needs at least 2 subjects, got " +
                                         std::to_string(n_subjects));
  }
  std::vector<LosoFold> folds;
  for (int held = 0; held < n_subjects; ++held) {
    LosoFold f;
    f.held_out = held;
    for (int s = 0; s < n_subjects; ++s) {
      if (s != held) f.train_subjects.push_back(s);
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

void SyntheticSpec::validate() const {
  auto positive = [](long long v, const char* what) {
    if (v <= 0) throw Error(ErrorKind::invalid_argument, std::string("synthetic spec: ") + what + " must be positive");
  };
  positive(n_concepts, "n_concepts");
  positive(n_test_concepts, "n_test_concepts");
  positive(n_images_per_concept, "n_images_per_concept");
  positive(n_repeats, "n_repeats");
  positive(n_test_repeats, "n_test_repeats");
  positive(channels, "channels");
  positive(timepoints, "timepoints");
  positive(sampling_rate_hz, "sampling_rate_hz");
  positive(embed_dim, "embed_dim");
  positive(latent_contour, "latent_contour");
  positive(latent_object, "latent_object");
  positive(latent_context, "latent_context");
  positive(n_subjects, "n_subjects");
  if (n_test_concepts >= n_concepts) {
    throw Error(ErrorKind::invalid_argument, "synthetic spec: n_test_concepts must be below n_concepts");
  }
  if (latent_contour > embed_dim || latent_object > embed_dim || latent_context > embed_dim) {
    throw Error(ErrorKind::invalid_argument, "synthetic spec: latent dims exceed embedding dimension");
  }
  if (image_jitter < 0 || subject_variability < 0 || std::isnan(snr_db)) {
    throw Error(ErrorKind::invalid_argument, "synthetic spec: jitter/variability must be >= 0 and snr_db a number");
  }
}

json SyntheticSpec::to_json() const {
  json snr = std::isinf(snr_db) ? json("inf") : json(snr_db);
  return json{{"n_concepts", n_concepts},
              {"n_test_concepts", n_test_concepts},
              {"n_images_per_concept", n_images_per_concept},
              {"n_repeats", n_repeats},
              {"n_test_repeats", n_test_repeats},
              {"channels", channels},
              {"timepoints", timepoints},
              {"sampling_rate_hz", sampling_rate_hz},
              {"embed_dim", embed_dim},
              {"snr_db", snr},
              {"latent_contour", latent_contour},
              {"latent_object", latent_object},
              {"latent_context", latent_context},
              {"image_jitter", image_jitter},
              {"n_subjects", n_subjects},
              {"subject_variability", subject_variability},
              {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec s;
  const json defaults = s.to_json();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw Error(ErrorKind::config, "synthetic spec: unknown key '" + it.key() + "'");
  }
  try {
    s.n_concepts = j.value("n_concepts", s.n_concepts);
    s.n_test_concepts = j.value("n_test_concepts", s.n_test_concepts);
    s.n_images_per_concept = j.value("n_images_per_concept", s.n_images_per_concept);
    s.n_repeats = j.value("n_repeats", s.n_repeats);
    s.n_test_repeats = j.value("n_test_repeats", s.n_test_repeats);
    s.channels = j.value("channels", s.channels);
    s.timepoints = j.value("timepoints", s.timepoints);
    s.sampling_rate_hz = j.value("sampling_rate_hz", s.sampling_rate_hz);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    if (j.contains("snr_db")) {
      const auto& v = j["snr_db"];
      s.snr_db = v.is_string() && v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                  : v.get<double>();
    }
    s.latent_contour = j.value("latent_contour", s.latent_contour);
    s.latent_object = j.value("latent_object", s.latent_object);
    s.latent_context = j.value("latent_context", s.latent_context);
    s.image_jitter = j.value("image_jitter", s.image_jitter);
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.subject_variability = j.value("subject_variability", s.subject_variability);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::string subject_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sub-%02d", index + 1);
  return buf;
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int d = spec.embed_dim;
  const int C = spec.channels;
  const int T = spec.timepoints;
  const int n_train_concepts = spec.n_concepts - spec.n_test_concepts;
  const std::array<int, 3> kdim = {spec.latent_contour, spec.latent_object, spec.latent_context};

  auto rng = make_rng(spec.seed, 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticDataset ds;
  ds.spec = spec;

  // Catalog: training concepts first, then zero-shot test concepts with one image each.
  int next_image = 0;
  for (int c = 0; c < spec.n_concepts; ++c) {
    ConceptEntry e;
    e.concept_id = c;
    e.split = c < n_train_concepts ? Split::train : Split::test;
    e.class_label = category_order()[c % category_order().size()];
    const int n_img = e.split == Split::train ? spec.n_images_per_concept : 1;
    for (int k = 0; k < n_img; ++k) e.image_ids.push_back(next_image++);
    ds.catalog.concepts.push_back(std::move(e));
  }
  const int n_images = next_image;

  // Per-concept latents, one independent block per view.
  std::array<MatD, 3> concept_latent;
  for (int v = 0; v < 3; ++v) {
    concept_latent[v].resize(spec.n_concepts, kdim[v]);
    for (int c = 0; c < spec.n_concepts; ++c)
      for (int k = 0; k < kdim[v]; ++k) concept_latent[v](c, k) = normal(rng);
  }

  // Fixed linear maps latent -> embedding, one per view.
  std::array<MatD, 3> embed_map;
  for (int v = 0; v < 3; ++v) {
    embed_map[v].resize(d, kdim[v]);
    for (int i = 0; i < d; ++i)
      for (int k = 0; k < kdim[v]; ++k) embed_map[v](i, k) = normal(rng);
  }

  ds.embeddings = Mat::Zero(n_images, 3 * d);
  for (const auto& e : ds.catalog.concepts) {
    for (int img : e.image_ids) {
      for (int v = 0; v < 3; ++v) {
        Eigen::VectorXd z = concept_latent[v].row(e.concept_id).transpose();
        for (int k = 0; k < kdim[v]; ++k) z(k) += spec.image_jitter * normal(rng);
        Eigen::VectorXd emb = embed_map[v] * z;
        const double n = emb.norm();
        if (n > 0) emb /= n;
        ds.embeddings.block(img, v * d, 1, d) = emb.transpose().cast<Real>();
      }
    }
  }

  // Spatiotemporal templates: every latent dimension owns a spatial pattern; each view
  // has a temporal waveform peaking at its own post-onset latency.
  const double onset = 0.2 * spec.sampling_rate_hz;
  const std::array<double, 3> latency_s = {0.10, 0.17, 0.30};
  const double width = 0.08 * spec.sampling_rate_hz;
  std::array<Eigen::VectorXd, 3> waveform;
  for (int v = 0; v < 3; ++v) {
    waveform[v].resize(T);
    const double centre = onset + latency_s[v] * spec.sampling_rate_hz;
    for (int t = 0; t < T; ++t) {
      const double u = (t - centre) / width;
      waveform[v](t) = std::exp(-0.5 * u * u);
    }
  }
  std::array<MatD, 3> spatial_base;
  for (int v = 0; v < 3; ++v) {
    spatial_base[v].resize(kdim[v], C);
    for (int k = 0; k < kdim[v]; ++k)
      for (int ch = 0; ch < C; ++ch) spatial_base[v](k, ch) = normal(rng);
  }

  std::vector<std::string> labels;
  for (int ch = 0; ch < C; ++ch) labels.push_back("E" + std::to_string(ch + 1));

  for (int s = 0; s < spec.n_subjects; ++s) {
    auto srng = make_rng(spec.seed, 1000 + static_cast<std::uint64_t>(s));
    std::array<MatD, 3> spatial;
    for (int v = 0; v < 3; ++v) {
      spatial[v] = spatial_base[v];
      if (s > 0 || spec.n_subjects > 1) {
        for (int k = 0; k < kdim[v]; ++k)
          for (int ch = 0; ch < C; ++ch) spatial[v](k, ch) += spec.subject_variability * normal(srng);
      }
      spatial[v] /= std::sqrt(static_cast<double>(C));
    }

    // Noise-free response per concept.
    std::vector<MatD> clean(spec.n_concepts, MatD::Zero(C, T));
    double power = 0.0;
    for (int c = 0; c < spec.n_concepts; ++c) {
      for (int v = 0; v < 3; ++v) {
        Eigen::VectorXd pattern = spatial[v].transpose() * concept_latent[v].row(c).transpose();
        clean[c] += pattern * waveform[v].transpose();
      }
      power += clean[c].squaredNorm();
    }
    power /= static_cast<double>(spec.n_concepts) * C * T;
    const double noise_sd = std::isinf(spec.snr_db) && spec.snr_db > 0
                                ? 0.0
                                : std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));

    EEGTrialArray eeg;
    eeg.n_channels = C;
    eeg.n_times = T;
    eeg.sampling_rate_hz = spec.sampling_rate_hz;
    eeg.channel_labels = labels;
    for (const auto& e : ds.catalog.concepts) {
      const int reps = e.split == Split::train ? spec.n_repeats : spec.n_test_repeats;
      for (int img : e.image_ids) {
        for (int r = 0; r < reps; ++r) {
          const MatD& x = clean[e.concept_id];
          for (int ch = 0; ch < C; ++ch)
            for (int t = 0; t < T; ++t) {
              const double noise = noise_sd > 0 ? noise_sd * normal(srng) : 0.0;
              eeg.data.push_back(static_cast<float>(x(ch, t) + noise));
            }
          eeg.concept_ids.push_back(e.concept_id);
          eeg.image_ids.push_back(img);
          eeg.repeat_index.push_back(r);
          ++eeg.n_trials;
        }
      }
    }
    eeg.provenance = {{"source", "synthetic"},
                      {"subject", subject_name(s)},
                      {"n_channels", C},
                      {"n_times", T},
                      {"sampling_rate_hz", spec.sampling_rate_hz},
                      {"noise_sd", noise_sd}};
    ds.subjects.push_back(std::move(eeg));
  }
  return ds;
}

void save_dataset(const DatasetLayout& layout, const SyntheticDataset& ds) {
  fs::create_directories(layout.root);
  save_catalog(layout.catalog(), ds.catalog);
  Tensor emb;
  emb.name = "embeddings";
  const auto d = ds.embeddings.cols() / 3;
  emb.shape = {ds.embeddings.rows(), 3, d};
  emb.data.assign(ds.embeddings.data(), ds.embeddings.data() + ds.embeddings.size());
  write_tensor(layout.embeddings(), emb);
  write_file_atomic(layout.root / "synthetic_spec.json", ds.spec.to_json().dump(1));
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const auto name = subject_name(static_cast<int>(s));
    save_eeg(layout.split_dir(name, Split::train), select_split(ds.subjects[s], ds.catalog, Split::train));
    save_eeg(layout.split_dir(name, Split::test), select_split(ds.subjects[s], ds.catalog, Split::test));
  }
}

Mat load_embeddings(const DatasetLayout& layout, int* embed_dim) {
  Tensor t = read_tensor(layout.embeddings());
  if (t.shape.size() != 3 || t.shape[1] != 3) {
    throw Error(ErrorKind::format, layout.embeddings().string() + ": expected [n_images x 3 x d]");
  }
  if (embed_dim) *embed_dim = static_cast<int>(t.shape[2]);
  return to_mat(t, t.shape[0], 3 * t.shape[2]);
}

}  // namespace hiervis
