#include "hiervis/config.hpp"

#include "hiervis/tensor_file.hpp"

namespace hiervis {

using json = nlohmann::json;

std::string to_string(Protocol p) { return p == Protocol::subject_dependent ? "subject_dependent" : "loso"; }

Protocol parse_protocol(const std::string& s) {
  if (s == "dep" || s == "subject_dependent") return Protocol::subject_dependent;
  if (s == "loso") return Protocol::loso;
  throw Error(ErrorKind::config, "unknown protocol '" + s + "' (expected dep or loso)");
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::config, where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) throw Error(ErrorKind::config, where + ": unknown key '" + it.key() + "'");
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

}  // namespace

json RunConfig::to_json() const {
  const json m = hiervis::to_json(model);
  json t = hiervis::to_json(training);
  json objective = {{"direction", t["direction"]},
                    {"views", t["views"]},
                    {"init_logit_scale", m["init_logit_scale"]},
                    {"embed_dim", m["embed_dim"]}};
  t.erase("direction");
  t.erase("views");
  return {{"data",
           {{"average_train_repeats", data.average_train_repeats},
            {"loso_val_size", data.loso_val_size},
            {"subjects", data.subjects}}},
          {"encoder", m["encoder"]},
          {"attention", m["attention"]},
          {"objective", objective},
          {"training", t},
          {"evaluation", {{"k", evaluation.k}, {"top_n", evaluation.top_n}, {"batch_size", evaluation.batch_size}}},
          {"decomposition", {{"mask_threshold", static_cast<double>(mask_threshold)}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, {"data", "encoder", "attention", "objective", "training", "evaluation", "decomposition"}, "config");

  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"average_train_repeats", "loso_val_size", "subjects"}, "data");
    c.data.average_train_repeats = get_or(d, "average_train_repeats", c.data.average_train_repeats, "data");
    c.data.loso_val_size = get_or(d, "loso_val_size", c.data.loso_val_size, "data");
    c.data.subjects = get_or(d, "subjects", c.data.subjects, "data");
    if (c.data.loso_val_size < 0) throw Error(ErrorKind::config, "data.loso_val_size must be >= 0");
  }

  // Model sections are validated by the model-config reader.
  json model = json::object();
  if (j.contains("encoder")) model["encoder"] = j.at("encoder");
  if (j.contains("attention")) model["attention"] = j.at("attention");
  json training = j.value("training", json::object());
  if (!training.is_object()) throw Error(ErrorKind::config, "training: expected an object");
  for (const char* k : {"direction", "views"}) {
    if (training.contains(k)) throw Error(ErrorKind::config, std::string("training: '") + k + "' belongs in objective");
  }
  if (j.contains("objective")) {
    const json& o = j.at("objective");
    reject_unknown(o, {"direction", "views", "init_logit_scale", "embed_dim"}, "objective");
    for (const char* k : {"init_logit_scale", "embed_dim"})
      if (o.contains(k)) model[k] = o.at(k);
    for (const char* k : {"direction", "views"})
      if (o.contains(k)) training[k] = o.at(k);
    c.explicit_embed_dim = o.contains("embed_dim");
  }
  if (j.contains("encoder") && j.at("encoder").is_object()) {
    c.explicit_channels = j.at("encoder").contains("channels");
    c.explicit_timepoints = j.at("encoder").contains("timepoints");
  }
  c.model = model_config_from_json(model);
  c.training = train_config_from_json(training);

  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    reject_unknown(e, {"k", "top_n", "batch_size"}, "evaluation");
    c.evaluation.k = get_or(e, "k", c.evaluation.k, "evaluation");
    c.evaluation.top_n = get_or(e, "top_n", c.evaluation.top_n, "evaluation");
    c.evaluation.batch_size = get_or(e, "batch_size", c.evaluation.batch_size, "evaluation");
    if (c.evaluation.k.empty()) throw Error(ErrorKind::config, "evaluation.k must not be empty");
    for (int k : c.evaluation.k)
      if (k < 1) throw Error(ErrorKind::config, "evaluation.k entries must be positive");
    if (c.evaluation.top_n < 1 || c.evaluation.batch_size < 1) {
      throw Error(ErrorKind::config, "evaluation.top_n and evaluation.batch_size must be positive");
    }
  }
  if (j.contains("decomposition")) {
    const json& d = j.at("decomposition");
    reject_unknown(d, {"mask_threshold"}, "decomposition");
    c.mask_threshold = get_or(d, "mask_threshold", c.mask_threshold, "decomposition");
    if (!(c.mask_threshold >= 0.0f && c.mask_threshold <= 1.0f)) {
      throw Error(ErrorKind::config, "decomposition.mask_threshold must lie in [0, 1]");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

}  // namespace hiervis
