#include "hiervis/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace hiervis {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::vector<ViewSet>& report_views() {
  static const std::vector<ViewSet> v = {ViewSet::only(View::contour), ViewSet::only(View::object),
                                         ViewSet::only(View::context), ViewSet::all()};
  return v;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Dataset open_dataset(const fs::path& root) {
  Dataset d;
  d.layout.root = root;
  if (!fs::is_directory(root)) throw Error(ErrorKind::io, "dataset directory " + root.string() + " does not exist");
  d.catalog = load_catalog(d.layout.catalog());
  d.embeddings = load_embeddings(d.layout, &d.embed_dim);
  if (d.embeddings.rows() < d.catalog.n_images()) {
    throw Error(ErrorKind::format, "embeddings.tensor has " + std::to_string(d.embeddings.rows()) +
                                       " rows but the catalog lists " + std::to_string(d.catalog.n_images()) +
                                       " images");
  }
  d.subjects = d.layout.subjects();
  if (d.subjects.empty()) throw Error(ErrorKind::format, "dataset " + root.string() + " has no subject folders");
  return d;
}

ModelConfig resolve_model_config(const RunConfig& cfg, const Dataset& data) {
  ModelConfig m = cfg.model;
  const EEGTrialArray probe = load_eeg(data.layout, data.subjects.front(), Split::test);
  auto pin = [](bool explicit_value, int& field, int actual, const char* what) {
    if (explicit_value && field != actual) {
      throw Error(ErrorKind::config, std::string("config sets ") + what + " = " + std::to_string(field) +
                                         " but the data has " + std::to_string(actual));
    }
    field = actual;
  };
  pin(cfg.explicit_channels, m.encoder.channels, probe.n_channels, "encoder.channels");
  pin(cfg.explicit_timepoints, m.encoder.timepoints, probe.n_times, "encoder.timepoints");
  pin(cfg.explicit_embed_dim, m.embed_dim, data.embed_dim, "objective.embed_dim");
  m.validate();
  return m;
}

json resolved_config_json(const RunConfig& cfg, const Dataset& data) {
  RunConfig c = cfg;
  c.model = resolve_model_config(cfg, data);
  return c.to_json();
}

std::vector<std::string> selected_subjects(const RunConfig& cfg, const Dataset& data) {
  if (cfg.data.subjects.empty()) return data.subjects;
  for (const auto& s : cfg.data.subjects) {
    if (std::find(data.subjects.begin(), data.subjects.end(), s) == data.subjects.end()) {
      throw Error(ErrorKind::config, "subject '" + s + "' not found in the dataset");
    }
  }
  return cfg.data.subjects;
}

EvalSet prepare_eval_set(const Dataset& data, const ModelConfig& mcfg, const std::string& subject) {
  EvalSet s;
  const EEGTrialArray test = average_repeats(load_eeg(data.layout, subject, Split::test));
  std::map<int, int> gallery_row;  // image id -> gallery index
  std::vector<int> images;
  for (int cid : data.catalog.concept_ids(Split::test)) {
    const ConceptEntry& e = data.catalog.entry(cid);
    if (e.image_ids.empty()) throw Error(ErrorKind::format, "test concept " + std::to_string(cid) + " has no image");
    gallery_row[e.image_ids.front()] = static_cast<int>(images.size());
    images.push_back(e.image_ids.front());
    s.gallery_concepts.push_back(cid);
  }
  if (images.size() < 2) throw Error(ErrorKind::protocol, "zero-shot gallery needs at least 2 test concepts");
  s.gallery.resize(static_cast<Eigen::Index>(images.size()), data.embeddings.cols());
  for (std::size_t i = 0; i < images.size(); ++i) s.gallery.row(static_cast<Eigen::Index>(i)) = data.embeddings.row(images[i]);

  s.queries = make_pairs(test, data.embeddings, mcfg.encoder);
  for (int i = 0; i < test.n_trials; ++i) {
    const int img = test.image_ids[static_cast<std::size_t>(i)];
    const auto it = gallery_row.find(img);
    if (it == gallery_row.end()) {
      throw Error(ErrorKind::protocol, "test trial " + std::to_string(i) + " shows image " + std::to_string(img) +
                                           ", which is not in the zero-shot gallery");
    }
    s.truth.push_back(it->second);
    s.query_labels.push_back(data.catalog.entry(test.concept_ids[static_cast<std::size_t>(i)]).class_label);
  }
  return s;
}

Experiment prepare_experiment(const Dataset& data, const RunConfig& cfg, const ModelConfig& mcfg, Protocol protocol,
                              const std::string& subject, std::uint64_t seed) {
  auto load_train = [&](const std::string& sub) {
    EEGTrialArray e = load_eeg(data.layout, sub, Split::train);
    return cfg.data.average_train_repeats ? average_repeats(e) : e;
  };

  EEGTrialArray pool;
  int val_size = cfg.training.val_size;
  if (protocol == Protocol::subject_dependent) {
    pool = load_train(subject);
  } else {
    if (data.subjects.size() < 2) throw Error(ErrorKind::protocol, "LOSO needs at least 2 subjects");
    std::vector<EEGTrialArray> parts;
    for (const auto& s : data.subjects)
      if (s != subject) parts.push_back(load_train(s));
    pool = concat_trials(parts);
    val_size = cfg.data.loso_val_size;
  }

  // Zero-shot: no test concept may appear among training trials.
  const auto test_ids = data.catalog.concept_ids(Split::test);
  const std::set<int> test_set(test_ids.begin(), test_ids.end());
  for (int i = 0; i < pool.n_trials; ++i) {
    if (test_set.count(pool.concept_ids[static_cast<std::size_t>(i)])) {
      throw Error(ErrorKind::protocol, "training trial " + std::to_string(i) + " belongs to test concept " +
                                           std::to_string(pool.concept_ids[static_cast<std::size_t>(i)]));
    }
  }
  if (val_size >= pool.n_trials - 1) {
    throw Error(ErrorKind::config, "validation size " + std::to_string(val_size) + " leaves too few of " +
                                       std::to_string(pool.n_trials) + " training trials");
  }

  Experiment x;
  const TrainValSplit split = split_validation(pool, val_size, seed);
  x.train = make_pairs(split.train, data.embeddings, mcfg.encoder);
  x.val = make_pairs(split.val, data.embeddings, mcfg.encoder);
  x.test = prepare_eval_set(data, mcfg, subject);
  return x;
}

ViewScores evaluate_retrieval(const Model& model, const EvalSet& set, const EvalConfig& cfg) {
  const HierarchicalFeatures f = extract_features(model, set.queries.windows, cfg.batch_size);
  ViewScores out;
  for (const ViewSet& v : report_views()) {
    out[v.name()] = per_view_retrieval(f, set.gallery, set.truth, v, cfg.k, cfg.top_n).topk;
  }
  return out;
}

RunOutput run_once(const Dataset& data, const RunConfig& cfg, Protocol protocol, const std::string& subject,
                   std::uint64_t seed, const EpochCallback& on_epoch) {
  const ModelConfig mcfg = resolve_model_config(cfg, data);
  const Experiment x = prepare_experiment(data, cfg, mcfg, protocol, subject, seed);
  TrainConfig tcfg = cfg.training;
  tcfg.seed = seed;
  Model model(mcfg);
  model.init(seed);

  RunOutput out;
  out.training = train(std::move(model), x.train, x.val, tcfg, on_epoch);
  RunRecord& r = out.record;
  r.subject = subject;
  r.seed = seed;
  r.best_epoch = out.training.best_epoch;
  r.best_val_loss = out.training.best_val_loss;
  r.rng_digest = out.training.rng_digest;
  r.warnings = out.training.warnings;
  r.scores = evaluate_retrieval(out.training.model, x.test, cfg.evaluation);
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

RetrievalReport repeat_runs(const Dataset& data, const RunConfig& cfg, Protocol protocol, int n, int threads) {
  if (n < 1) throw Error(ErrorKind::config, "repeat count must be positive");
  RetrievalReport rep;
  rep.protocol = protocol;
  rep.config = resolved_config_json(cfg, data);
  for (int i = 0; i < n; ++i) rep.seeds.push_back(cfg.training.seed + static_cast<std::uint64_t>(i));

  const auto subjects = selected_subjects(cfg, data);
  const int jobs = static_cast<int>(subjects.size()) * n;
  rep.runs.resize(static_cast<std::size_t>(jobs));
  parallel_for(jobs, threads, [&](int job) {
    const auto& subject = subjects[static_cast<std::size_t>(job / n)];
    const auto seed = rep.seeds[static_cast<std::size_t>(job % n)];
    rep.runs[static_cast<std::size_t>(job)] = run_once(data, cfg, protocol, subject, seed).record;
  });
  return rep;
}

ViewScores mean_scores(std::span<const RunRecord> runs) {
  ViewScores out;
  for (const auto& r : runs)
    for (const auto& [view, ks] : r.scores)
      for (const auto& [k, acc] : ks) out[view][k] += acc / static_cast<double>(runs.size());
  return out;
}

namespace {

json scores_json(const ViewScores& s) {
  json j = json::object();
  for (const auto& [view, ks] : s) {
    json v = json::object();
    for (const auto& [k, acc] : ks) v["top" + std::to_string(k)] = acc;
    j[view] = v;
  }
  return j;
}

// Per subject: view -> k -> values across runs.
std::map<std::string, std::map<std::string, std::map<int, std::vector<double>>>> collect(
    std::span<const RunRecord> runs) {
  std::map<std::string, std::map<std::string, std::map<int, std::vector<double>>>> out;
  for (const auto& r : runs)
    for (const auto& [view, ks] : r.scores)
      for (const auto& [k, acc] : ks) out[r.subject][view][k].push_back(acc);
  return out;
}

}  // namespace

json RetrievalReport::to_json() const {
  json j;
  j["protocol"] = to_string(protocol);
  j["seeds"] = seeds;
  j["config"] = config;

  const auto by_subject = collect(runs);
  json subjects = json::array();
  std::map<std::string, std::map<int, std::vector<double>>> subject_means;
  for (const auto& [subject, views] : by_subject) {
    json s;
    s["subject"] = subject;
    json run_list = json::array();
    for (const auto& r : runs) {
      if (r.subject != subject) continue;
      run_list.push_back({{"seed", r.seed},
                          {"best_epoch", r.best_epoch},
                          {"best_val_loss", r.best_val_loss},
                          {"rng_digest", r.rng_digest},
                          {"warnings", r.warnings},
                          {"views", scores_json(r.scores)}});
    }
    s["runs"] = run_list;
    json mean = json::object(), sd = json::object();
    for (const auto& [view, ks] : views) {
      for (const auto& [k, vals] : ks) {
        const MeanStd ms = mean_std(vals);
        mean[view]["top" + std::to_string(k)] = ms.mean;
        sd[view]["top" + std::to_string(k)] = ms.std;
        subject_means[view][k].push_back(ms.mean);
      }
    }
    s["mean"] = mean;
    s["std"] = sd;
    subjects.push_back(s);
  }
  j["subjects"] = subjects;

  json mean = json::object(), sd = json::object();
  for (const auto& [view, ks] : subject_means) {
    for (const auto& [k, vals] : ks) {
      const MeanStd ms = mean_std(vals);
      mean[view]["top" + std::to_string(k)] = ms.mean;
      sd[view]["top" + std::to_string(k)] = ms.std;
    }
  }
  j["overall"] = {{"mean", mean}, {"std_across_subjects", sd}};
  return j;
}

std::string RetrievalReport::to_csv() const {
  std::ostringstream os;
  os << "protocol,subject,view,metric,mean,std,n\n";
  for (const auto& [subject, views] : collect(runs)) {
    for (const auto& [view, ks] : views) {
      for (const auto& [k, vals] : ks) {
        const MeanStd ms = mean_std(vals);
        os << to_string(protocol) << ',' << subject << ',' << view << ",top" << k << ',' << fmt_double(ms.mean) << ','
           << fmt_double(ms.std) << ',' << vals.size() << '\n';
      }
    }
  }
  return os.str();
}

std::vector<AblationRow> run_ablation(const Dataset& data, const RunConfig& cfg, Protocol protocol, int n_seeds,
                                      int threads) {
  struct Setting {
    ViewSet views;
    bool attention;
  };
  std::vector<Setting> settings;
  for (bool att : {true, false})
    for (const ViewSet& v : ViewSet::nonempty_subsets()) settings.push_back({v, att});

  const auto subjects = selected_subjects(cfg, data);
  const int per_setting = static_cast<int>(subjects.size()) * n_seeds;
  const int jobs = static_cast<int>(settings.size()) * per_setting;
  std::vector<std::map<int, double>> results(static_cast<std::size_t>(jobs));

  parallel_for(jobs, threads, [&](int job) {
    const Setting& st = settings[static_cast<std::size_t>(job / per_setting)];
    const int rest = job % per_setting;
    const auto& subject = subjects[static_cast<std::size_t>(rest / n_seeds)];
    const auto seed = cfg.training.seed + static_cast<std::uint64_t>(rest % n_seeds);
    RunConfig c = cfg;
    c.training.views = st.views;
    c.model.attention.enabled = st.attention;
    const ModelConfig mcfg = resolve_model_config(c, data);
    const Experiment x = prepare_experiment(data, c, mcfg, protocol, subject, seed);
    TrainConfig tcfg = c.training;
    tcfg.seed = seed;
    Model model(mcfg);
    model.init(seed);
    const TrainResult tr = train(std::move(model), x.train, x.val, tcfg);
    const HierarchicalFeatures f = extract_features(tr.model, x.test.queries.windows, c.evaluation.batch_size);
    results[static_cast<std::size_t>(job)] =
        per_view_retrieval(f, x.test.gallery, x.test.truth, st.views, c.evaluation.k, c.evaluation.top_n).topk;
  });

  std::vector<AblationRow> rows;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    AblationRow row;
    row.views = settings[s].views.name();
    row.cross_attention = settings[s].attention;
    for (int k : cfg.evaluation.k) {
      std::vector<double> vals;
      for (int i = 0; i < per_setting; ++i) vals.push_back(results[s * per_setting + static_cast<std::size_t>(i)].at(k));
      row.topk[k] = mean_std(vals);
    }
    rows.push_back(row);
  }
  return rows;
}

json ablation_to_json(std::span<const AblationRow> rows, const json& config) {
  json table = json::array();
  for (const auto& r : rows) {
    json row = {{"views", r.views}, {"cross_attention", r.cross_attention}};
    for (const auto& [k, ms] : r.topk) {
      row["top" + std::to_string(k)] = {{"mean", ms.mean}, {"std", ms.std}};
    }
    table.push_back(row);
  }
  return {{"config", config}, {"rows", table}};
}

std::string ablation_to_csv(std::span<const AblationRow> rows) {
  std::ostringstream os;
  os << "views,cross_attention,metric,mean,std\n";
  for (const auto& r : rows)
    for (const auto& [k, ms] : r.topk)
      os << r.views << ',' << (r.cross_attention ? "with" : "without") << ",top" << k << ',' << fmt_double(ms.mean)
         << ',' << fmt_double(ms.std) << '\n';
  return os.str();
}

std::vector<SweepCell> sweep_attention(const Dataset& data, const RunConfig& cfg, Protocol protocol,
                                       std::span<const int> layers, std::span<const int> heads, int n_seeds,
                                       int threads) {
  std::vector<SweepCell> cells;
  for (int l : layers)
    for (int h : heads) cells.push_back({l, h, {}, 0});
  for (auto& c : cells) {
    if (c.layers < 0 || c.heads < 1) throw Error(ErrorKind::config, "sweep: layers must be >= 0 and heads >= 1");
  }

  const auto subjects = selected_subjects(cfg, data);
  const int per_cell = static_cast<int>(subjects.size()) * n_seeds;
  const int jobs = static_cast<int>(cells.size()) * per_cell;
  std::vector<std::map<int, double>> results(static_cast<std::size_t>(jobs));

  auto cell_config = [&](const SweepCell& c) {
    RunConfig rc = cfg;
    rc.model.attention.n_layers = c.layers;
    rc.model.attention.heads = c.heads;
    rc.model.attention.head_dim = 0;
    return rc;
  };
  for (auto& c : cells) c.parameters = count_parameters(resolve_model_config(cell_config(c), data));

  parallel_for(jobs, threads, [&](int job) {
    const SweepCell& cell = cells[static_cast<std::size_t>(job / per_cell)];
    const int rest = job % per_cell;
    const auto& subject = subjects[static_cast<std::size_t>(rest / n_seeds)];
    const auto seed = cfg.training.seed + static_cast<std::uint64_t>(rest % n_seeds);
    const RunOutput out = run_once(data, cell_config(cell), protocol, subject, seed);
    results[static_cast<std::size_t>(job)] = out.record.scores.at(ViewSet::all().name());
  });

  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int k : cfg.evaluation.k) {
      std::vector<double> vals;
      for (int i = 0; i < per_cell; ++i) vals.push_back(results[c * per_cell + static_cast<std::size_t>(i)].at(k));
      cells[c].topk[k] = mean_std(vals);
    }
  }
  return cells;
}

json sweep_to_json(std::span<const SweepCell> cells, const json& config) {
  json rows = json::array();
  for (const auto& c : cells) {
    json row = {{"layers", c.layers}, {"heads", c.heads}, {"parameters", c.parameters}};
    for (const auto& [k, ms] : c.topk) row["top" + std::to_string(k)] = {{"mean", ms.mean}, {"std", ms.std}};
    rows.push_back(row);
  }
  return {{"config", config}, {"rows", rows}};
}

std::string sweep_to_csv(std::span<const SweepCell> cells) {
  std::ostringstream os;
  os << "layers,heads,parameters,metric,mean,std\n";
  for (const auto& c : cells)
    for (const auto& [k, ms] : c.topk)
      os << c.layers << ',' << c.heads << ',' << c.parameters << ",top" << k << ',' << fmt_double(ms.mean) << ','
         << fmt_double(ms.std) << '\n';
  return os.str();
}

}  // namespace hiervis
