#include "image_io.hpp"

#include "hiervis/config.hpp"
#include "hiervis/decomposition.hpp"
#include "hiervis/evaluation.hpp"
#include "hiervis/experiment.hpp"
#include "hiervis/tensor_file.hpp"
#include "hiervis/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace hiervis;
using namespace hiervis::tools;

namespace {

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& s) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, s);
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
}

fs::path default_cache_root() {
  if (const char* env = std::getenv("HIERVIS_CACHE"); env && *env) return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) return fs::path(xdg) / "hiervis";
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "hiervis";
  return fs::temp_directory_path() / "hiervis-cache";
}

// "0..5", "1,2,3", or a mix such as "0..2,4".
std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  try {
    while (std::getline(ss, item, ',')) {
      const auto dots = item.find("..");
      if (dots == std::string::npos) {
        out.push_back(std::stoi(item));
        continue;
      }
      const int lo = std::stoi(item.substr(0, dots));
      const int hi = std::stoi(item.substr(dots + 2));
      if (hi < lo) throw Error(ErrorKind::invalid_argument, "empty range '" + item + "'");
      for (int v = lo; v <= hi; ++v) out.push_back(v);
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::invalid_argument, "cannot parse integer list '" + s + "'");
  }
  if (out.empty()) throw Error(ErrorKind::invalid_argument, "empty integer list");
  return out;
}

std::unique_ptr<SaliencyProvider> make_saliency(const std::string& spec) {
  if (spec == "luminance") return std::make_unique<LuminanceSaliency>();
  if (spec.rfind("tensorfile:", 0) == 0) return std::make_unique<TensorFileSaliency>(spec.substr(11));
  if (spec.rfind("cmd:", 0) == 0) return std::make_unique<CommandSaliency>(spec.substr(4), "cmd-" + sha256_hex(spec).substr(0, 12));
  throw Error(ErrorKind::invalid_argument, "unknown saliency provider '" + spec + "'");
}

std::unique_ptr<EmbeddingProvider> make_embedding(const std::string& spec) {
  if (spec == "meanpool") return std::make_unique<MeanPoolEmbedding>();
  if (spec.rfind("meanpool:", 0) == 0) return std::make_unique<MeanPoolEmbedding>(parse_int_list(spec.substr(9)).front());
  if (spec.rfind("cmd:", 0) == 0) {
    const auto colon = spec.rfind(':');
    if (colon <= 4) throw Error(ErrorKind::invalid_argument, "command provider needs the form cmd:<command>:<dim>");
    const std::string command = spec.substr(4, colon - 4);
    const int dim = parse_int_list(spec.substr(colon + 1)).front();
    return std::make_unique<CommandEmbedding>(command, "cmd-" + sha256_hex(command).substr(0, 12), dim);
  }
  throw Error(ErrorKind::invalid_argument, "unknown embedding provider '" + spec + "'");
}

std::vector<fs::path> collect_images(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        const auto ext = e.path().extension();
        if (e.is_regular_file() && (ext == ".png" || ext == ".tensor")) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(in)) {
      out.emplace_back(in);
    } else {
      throw Error(ErrorKind::io, "image input " + in + " does not exist");
    }
  }
  if (out.empty()) throw Error(ErrorKind::invalid_argument, "no images found");
  return out;
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

// Report path "x/report.json" -> ("x/report.json", "x/report.csv").
void write_report(const fs::path& path, const RetrievalReport& rep) {
  write_json(path, rep.to_json());
  fs::path csv = path;
  csv.replace_extension(".csv");
  write_text(csv, rep.to_csv());
}

void log_epoch(const EpochRecord& r) {
  spdlog::info("epoch {:4d}  train {:.5f}  val {:.5f}  {:.0f} ms", r.epoch, r.train_loss, r.val_loss, r.wall_ms);
}

struct Common {
  std::string data;
  std::string config;
  std::string protocol = "dep";
  int threads = 1;
};

void add_threads(CLI::App* cmd, int& threads) {
  cmd->add_option("--threads", threads, "Worker threads; results do not depend on it")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_st("hiervis"));
  spdlog::set_pattern("%H:%M:%S %^%l%$ %v");

  CLI::App app{"Hierarchical EEG-to-image retrieval: decomposition, training and evaluation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

  // decompose
  auto* decompose_cmd = app.add_subcommand("decompose", "Split images into mask / foreground / raw triplets");
  std::vector<std::string> images;
  std::string saliency = "luminance";
  float tau = kDefaultMaskThreshold;
  int size = kDecompositionSize;
  std::string decompose_out;
  int decompose_threads = 1;
  decompose_cmd->add_option("--images", images, "PNG or .tensor images, or directories of them")->required();
  decompose_cmd
      ->add_option("--saliency-provider", saliency,
                   "luminance | tensorfile:<dir> (<dir>/<id>.tensor maps) | cmd:<command> (run as <command> in out)")
      ->capture_default_str();
  decompose_cmd->add_option("--tau", tau, "Mask threshold; saliency > tau is foreground")
      ->capture_default_str()
      ->check(CLI::Range(0.0f, 1.0f));
  decompose_cmd->add_option("--size", size, "Square resolution the raw image is resized to")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  decompose_cmd->add_option("--out", decompose_out, "Output directory, one triplet folder per image")->required();
  add_threads(decompose_cmd, decompose_threads);

  // embed
  auto* embed_cmd = app.add_subcommand("embed", "Embed decomposed triplets through a cached provider");
  std::string triplets, embed_provider = "meanpool", cache_dir, embed_out;
  int embed_threads = 1;
  embed_cmd->add_option("--triplets", triplets, "Directory written by decompose")->required();
  embed_cmd->add_option("--provider", embed_provider, "meanpool[:<dim>] | cmd:<command>:<dim>")->capture_default_str();
  embed_cmd->add_option("--cache", cache_dir, "Cache root (default: $HIERVIS_CACHE, else ~/.cache/hiervis)");
  embed_cmd->add_option("--out", embed_out, "Optional [n x 3 x d] TensorFile of the embeddings, rows in index order");
  add_threads(embed_cmd, embed_threads);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset with planted view latents");
  std::string spec_path, synth_out;
  std::optional<std::uint64_t> synth_seed;
  synth_cmd->add_option("--spec", spec_path, "Generator settings (JSON); defaults when omitted");
  synth_cmd->add_option("--seed", synth_seed, "Override the generator seed");
  synth_cmd->add_option("--out", synth_out, "Dataset directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model and evaluate it on the held-out concepts");
  Common tr;
  std::string train_out, train_subject;
  std::optional<std::uint64_t> train_seed;
  train_cmd->add_option("--config", tr.config, "Run config (JSON); defaults when omitted");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Output directory (checkpoint/, train_log.jsonl, report.json)")->required();
  train_cmd->add_option("--protocol", tr.protocol, "dep | loso")->capture_default_str();
  train_cmd->add_option("--subject", train_subject, "Subject to train on (LOSO: held out); default the first");
  train_cmd->add_option("--seed", train_seed, "Override training.seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Zero-shot retrieval report");
  Common ev;
  std::string checkpoint, report_path;
  std::vector<std::string> eval_subjects;
  int repeats = 0;
  eval_cmd->add_option("--checkpoint", checkpoint, "Evaluate this checkpoint");
  eval_cmd->add_option("--config", ev.config, "Train and evaluate repeated runs from this config instead");
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--protocol", ev.protocol, "dep | loso")->capture_default_str();
  eval_cmd->add_option("--report", report_path, "Report JSON path; a CSV is written next to it")->required();
  eval_cmd->add_option("--subject", eval_subjects, "Subjects to evaluate (default: checkpoint's, or config's)");
  eval_cmd->add_option("--repeats", repeats, "Seeds per subject with --config (default training.n_repeats)");
  add_threads(eval_cmd, ev.threads);

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "View subsets x with/without cross-attention");
  Common ab;
  std::string ablate_out;
  int ablate_seeds = 0;
  ablate_cmd->add_option("--config", ab.config, "Run config (JSON); defaults when omitted");
  ablate_cmd->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_cmd->add_option("--out", ablate_out, "Output directory (ablation.json, ablation.csv)")->required();
  ablate_cmd->add_option("--protocol", ab.protocol, "dep | loso")->capture_default_str();
  ablate_cmd->add_option("--seeds", ablate_seeds, "Seeds per setting (default training.n_repeats)");
  add_threads(ablate_cmd, ab.threads);

  // rsm
  auto* rsm_cmd = app.add_subcommand("rsm", "Representational similarity matrix of test-set features");
  std::string rsm_ckpt, rsm_data, rsm_out, rsm_plot, rsm_subject, rsm_view = "Triple";
  rsm_cmd->add_option("--checkpoint", rsm_ckpt, "Checkpoint directory")->required();
  rsm_cmd->add_option("--data", rsm_data, "Dataset directory")->required();
  rsm_cmd->add_option("--out", rsm_out, "Output directory (rsm.tensor, rsm.json)")->required();
  rsm_cmd->add_option("--plot", rsm_plot, "Heatmap image (.png or .svg)");
  rsm_cmd->add_option("--subject", rsm_subject, "Subject whose test trials are used (default: checkpoint's)");
  rsm_cmd->add_option("--view", rsm_view, "BOM | FO | RS | Triple or a '+' combination")->capture_default_str();

  // sweep-attn
  auto* sweep_cmd = app.add_subcommand("sweep-attn", "Grid over attention layers and heads");
  Common sw;
  std::string sweep_out, layers_s = "0..5", heads_s = "1,2,3,4,6";
  int sweep_seeds = 1;
  sweep_cmd->add_option("--config", sw.config, "Run config (JSON); defaults when omitted");
  sweep_cmd->add_option("--data", sw.data, "Dataset directory")->required();
  sweep_cmd->add_option("--out", sweep_out, "Output directory (sweep.json, sweep.csv)")->required();
  sweep_cmd->add_option("--layers", layers_s, "Layer counts, e.g. 0..5")->capture_default_str();
  sweep_cmd->add_option("--heads", heads_s, "Head counts, e.g. 1,2,3,4,6")->capture_default_str();
  sweep_cmd->add_option("--seeds", sweep_seeds, "Seeds per cell")->capture_default_str()->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--protocol", sw.protocol, "dep | loso")->capture_default_str();
  add_threads(sweep_cmd, sw.threads);

  // report
  auto* report_cmd = app.add_subcommand("report", "Merge retrieval, ablation and sweep outputs into one table");
  std::vector<std::string> inputs;
  std::string format = "csv", report_out;
  report_cmd->add_option("--inputs", inputs, "JSON outputs of eval, train, ablate or sweep-attn")->required();
  report_cmd->add_option("--format", format, "csv | json")->capture_default_str()->check(CLI::IsMember({"csv", "json"}));
  report_cmd->add_option("--out", report_out, "Output file (default stdout)");

  // account
  auto* account_cmd = app.add_subcommand("account", "Parameter and FLOP accounting for a model config");
  std::string account_config, account_out;
  account_cmd->add_option("--config", account_config, "Run config (JSON); defaults when omitted");
  account_cmd->add_option("--out", account_out, "Output file (default stdout)");

  std::string verb = "hiervis";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }
  if (quiet) spdlog::set_level(spdlog::level::warn);

  try {
    if (*decompose_cmd) {
      verb = "decompose";
      auto provider = make_saliency(saliency);
      const auto paths = collect_images(images);
      std::vector<std::string> ids(paths.size());
      parallel_for(static_cast<int>(paths.size()), decompose_threads, [&](int i) {
        const Image img = load_image(paths[static_cast<std::size_t>(i)]);
        TripletRecord rec{img.id, tau, provider->provider_id(), decompose(img, *provider, tau, size)};
        save_triplet(fs::path(decompose_out) / img.id, rec);
        ids[static_cast<std::size_t>(i)] = img.id;
      });
      write_json(fs::path(decompose_out) / "index.json", {{"ids", ids}, {"tau", tau}, {"size", size},
                                                          {"saliency_provider", provider->provider_id()}});
      spdlog::info("decomposed {} images into {}", ids.size(), decompose_out);
    } else if (*embed_cmd) {
      verb = "embed";
      auto provider = make_embedding(embed_provider);
      EmbeddingCache cache(cache_dir.empty() ? default_cache_root() : fs::path(cache_dir));
      const json index = read_json(fs::path(triplets) / "index.json");
      const auto ids = index.at("ids").get<std::vector<std::string>>();
      const int d = provider->dim();
      std::vector<float> out(ids.size() * 3 * static_cast<std::size_t>(d));
      parallel_for(static_cast<int>(ids.size()), embed_threads, [&](int i) {
        const TripletRecord rec = load_triplet(fs::path(triplets) / ids[static_cast<std::size_t>(i)]);
        const EmbeddingTriplet e = embed_triplet(rec.triplet, *provider, &cache, rec.tau);
        auto dst = out.begin() + static_cast<std::ptrdiff_t>(i) * 3 * d;
        dst = std::copy(e.contour.begin(), e.contour.end(), dst);
        dst = std::copy(e.object.begin(), e.object.end(), dst);
        std::copy(e.context.begin(), e.context.end(), dst);
      });
      if (!embed_out.empty()) {
        write_tensor(embed_out, Tensor{"embeddings", {static_cast<std::int64_t>(ids.size()), 3, d}, out});
        fs::path meta = embed_out;
        meta.replace_extension(".json");
        write_json(meta, {{"ids", ids}, {"provider", provider->provider_id()}, {"dim", d}});
      }
      spdlog::info("embedded {} triplets with {} (cache {})", ids.size(), provider->provider_id(), cache.root().string());
    } else if (*synth_cmd) {
      verb = "synth";
      SyntheticSpec spec = spec_path.empty() ? SyntheticSpec{} : SyntheticSpec::from_json(read_json(spec_path));
      if (synth_seed) spec.seed = *synth_seed;
      const SyntheticDataset ds = generate_synthetic(spec);
      save_dataset(DatasetLayout{synth_out}, ds);
      spdlog::info("wrote {} subjects, {} concepts to {}", ds.subjects.size(), ds.catalog.concepts.size(), synth_out);
    } else if (*train_cmd) {
      verb = "train";
      RunConfig cfg = config_or_default(tr.config);
      if (train_seed) cfg.training.seed = *train_seed;
      const Protocol protocol = parse_protocol(tr.protocol);
      const Dataset data = open_dataset(tr.data);
      const std::string subject = train_subject.empty() ? selected_subjects(cfg, data).front() : train_subject;
      if (std::find(data.subjects.begin(), data.subjects.end(), subject) == data.subjects.end()) {
        throw Error(ErrorKind::config, "subject '" + subject + "' not found in the dataset");
      }

      const fs::path out(train_out);
      fs::create_directories(out);
      std::string log;
      RunOutput run = run_once(data, cfg, protocol, subject, cfg.training.seed, [&](const EpochRecord& r) {
        log += to_json(r).dump() + "\n";
        log_epoch(r);
      });
      write_text(out / "train_log.jsonl", log);
      for (const auto& w : run.record.warnings) spdlog::warn("{}", w);

      Checkpoint ckpt{run.training.model, cfg.training, run.training.best_epoch, run.training.best_val_loss,
                      run.training.rng_digest, json::object()};
      ckpt.extra = {{"subject", subject}, {"protocol", to_string(protocol)}, {"run_config", cfg.to_json()}};
      save_checkpoint(out / "checkpoint", ckpt);

      RetrievalReport rep;
      rep.protocol = protocol;
      rep.seeds = {cfg.training.seed};
      rep.runs = {run.record};
      rep.config = resolved_config_json(cfg, data);
      write_report(out / "report.json", rep);
      const auto& triple = run.record.scores.at("Triple");
      spdlog::info("best epoch {}  val {:.5f}  Triple top-1 {:.4f}", run.record.best_epoch, run.record.best_val_loss,
                   triple.count(1) ? triple.at(1) : 0.0);
    } else if (*eval_cmd) {
      verb = "eval";
      if (checkpoint.empty() == ev.config.empty()) {
        throw Error(ErrorKind::invalid_argument, "eval needs exactly one of --checkpoint or --config");
      }
      const Protocol protocol = parse_protocol(ev.protocol);
      const Dataset data = open_dataset(ev.data);
      RetrievalReport rep;
      if (!checkpoint.empty()) {
        const Checkpoint ckpt = load_checkpoint(checkpoint);
        const RunConfig cfg = ckpt.extra.contains("run_config") ? RunConfig::from_json(ckpt.extra.at("run_config"))
                                                                  : RunConfig{};
        const std::string trained_protocol = ckpt.extra.value("protocol", to_string(protocol));
        if (trained_protocol != to_string(protocol)) {
          throw Error(ErrorKind::protocol, "checkpoint was trained under " + trained_protocol + ", not " +
                                               to_string(protocol));
        }
        std::vector<std::string> subjects = eval_subjects;
        if (subjects.empty()) subjects.push_back(ckpt.extra.value("subject", data.subjects.front()));
        rep.protocol = protocol;
        rep.seeds = {ckpt.train_config.seed};
        RunConfig resolved = cfg;
        resolved.model = ckpt.model.config();
        rep.config = resolved.to_json();
        rep.config["checkpoint"] = {{"epoch", ckpt.epoch}, {"rng_digest", ckpt.rng_digest}};
        rep.runs.resize(subjects.size());
        parallel_for(static_cast<int>(subjects.size()), ev.threads, [&](int i) {
          const EvalSet set = prepare_eval_set(data, ckpt.model.config(), subjects[static_cast<std::size_t>(i)]);
          RunRecord& r = rep.runs[static_cast<std::size_t>(i)];
          r.subject = subjects[static_cast<std::size_t>(i)];
          r.seed = ckpt.train_config.seed;
          r.best_epoch = ckpt.epoch;
          r.best_val_loss = ckpt.val_loss;
          r.rng_digest = ckpt.rng_digest;
          r.scores = evaluate_retrieval(ckpt.model, set, cfg.evaluation);
        });
      } else {
        RunConfig cfg = load_run_config(ev.config);
        if (!eval_subjects.empty()) cfg.data.subjects = eval_subjects;
        rep = repeat_runs(data, cfg, protocol, repeats > 0 ? repeats : cfg.training.n_repeats, ev.threads);
      }
      write_report(report_path, rep);
      const json overall = rep.to_json().at("overall").at("mean");
      if (overall.contains("Triple")) spdlog::info("Triple: {}", overall.at("Triple").dump());
    } else if (*ablate_cmd) {
      verb = "ablate";
      const RunConfig cfg = config_or_default(ab.config);
      const Dataset data = open_dataset(ab.data);
      const auto rows = run_ablation(data, cfg, parse_protocol(ab.protocol),
                                     ablate_seeds > 0 ? ablate_seeds : cfg.training.n_repeats, ab.threads);
      write_json(fs::path(ablate_out) / "ablation.json", ablation_to_json(rows, resolved_config_json(cfg, data)));
      write_text(fs::path(ablate_out) / "ablation.csv", ablation_to_csv(rows));
    } else if (*rsm_cmd) {
      verb = "rsm";
      const Checkpoint ckpt = load_checkpoint(rsm_ckpt);
      const Dataset data = open_dataset(rsm_data);
      const std::string subject = rsm_subject.empty() ? ckpt.extra.value("subject", data.subjects.front()) : rsm_subject;
      const EvalSet set = prepare_eval_set(data, ckpt.model.config(), subject);
      const HierarchicalFeatures f = extract_features(ckpt.model, set.queries.windows);
      const RSMatrix r = compute_rsm(concat_views(f, ViewSet::parse(rsm_view)), set.query_labels);

      const fs::path out(rsm_out);
      fs::create_directories(out);
      write_tensor(out / "rsm.tensor", to_tensor("rsm", r.values));
      json blocks = json::array();
      for (const auto& [label, start] : r.blocks) blocks.push_back({{"category", label}, {"start", start}});
      write_json(out / "rsm.json", {{"subject", subject}, {"view", rsm_view}, {"order", r.order},
                                    {"labels", r.labels}, {"blocks", blocks}});
      if (!rsm_plot.empty()) write_heatmap(rsm_plot, r.values);
    } else if (*sweep_cmd) {
      verb = "sweep-attn";
      const RunConfig cfg = config_or_default(sw.config);
      const Dataset data = open_dataset(sw.data);
      const auto layers = parse_int_list(layers_s);
      const auto heads = parse_int_list(heads_s);
      const auto cells = sweep_attention(data, cfg, parse_protocol(sw.protocol), layers, heads, sweep_seeds, sw.threads);
      write_json(fs::path(sweep_out) / "sweep.json", sweep_to_json(cells, resolved_config_json(cfg, data)));
      write_text(fs::path(sweep_out) / "sweep.csv", sweep_to_csv(cells));
    } else if (*report_cmd) {
      verb = "report";
      json rows = json::array();
      for (const auto& in : inputs) {
        const json j = read_json(in);
        auto add = [&](const std::string& kind, const std::string& key, const std::string& metric, double mean,
                       double sd) {
          rows.push_back({{"source", in}, {"kind", kind}, {"key", key}, {"metric", metric}, {"mean", mean}, {"std", sd}});
        };
        if (j.contains("overall")) {
          const json& m = j.at("overall").at("mean");
          const json& s = j.at("overall").at("std_across_subjects");
          for (auto v = m.begin(); v != m.end(); ++v)
            for (auto k = v.value().begin(); k != v.value().end(); ++k)
              add("retrieval:" + j.value("protocol", ""), v.key(), k.key(), k.value().get<double>(),
                  s.at(v.key()).at(k.key()).get<double>());
        } else if (j.contains("rows")) {
          for (const json& r : j.at("rows")) {
            std::string kind, key;
            if (r.contains("views")) {
              kind = "ablation";
              key = r.at("views").get<std::string>() + (r.at("cross_attention").get<bool>() ? "" : " w/o C-Att");
            } else {
              kind = "sweep";
              key = "layers=" + std::to_string(r.at("layers").get<int>()) +
                    " heads=" + std::to_string(r.at("heads").get<int>());
            }
            for (auto f = r.begin(); f != r.end(); ++f)
              if (f.key().rfind("top", 0) == 0)
                add(kind, key, f.key(), f.value().at("mean").get<double>(), f.value().at("std").get<double>());
          }
        } else {
          throw Error(ErrorKind::format, in + ": not a retrieval, ablation or sweep output");
        }
      }
      std::string text;
      if (format == "json") {
        text = json{{"rows", rows}}.dump(2) + "\n";
      } else {
        std::ostringstream os;
        os << "source,kind,key,metric,mean,std\n";
        for (const json& r : rows) {
          os << r["source"].get<std::string>() << ',' << r["kind"].get<std::string>() << ','
             << r["key"].get<std::string>() << ',' << r["metric"].get<std::string>() << ','
             << r["mean"].get<double>() << ',' << r["std"].get<double>() << '\n';
        }
        text = os.str();
      }
      if (report_out.empty()) {
        std::cout << text;
      } else {
        write_text(report_out, text);
      }
    } else if (*account_cmd) {
      verb = "account";
      const RunConfig cfg = config_or_default(account_config);
      ModelConfig m = cfg.model;
      m.validate();
      json j = accounting_report(m);
      j["flops"] = to_json(estimate_flops(m));
      const std::string text = j.dump(2) + "\n";
      if (account_out.empty()) {
        std::cout << text;
      } else {
        write_text(account_out, text);
      }
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"verb", verb}, {"kind", to_string(e.kind())}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"verb", verb}, {"kind", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
  return 0;
}
