#include "hiervis/config.hpp"
#include "hiervis/decomposition.hpp"
#include "hiervis/encoder.hpp"
#include "hiervis/evaluation.hpp"
#include "hiervis/experiment.hpp"
#include "hiervis/objective.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>

namespace py = pybind11;
using namespace hiervis;
using json = nlohmann::json;

namespace {

RunConfig parse_config(const std::string& text) {
  return RunConfig::from_json(text.empty() ? json::object() : json::parse(text));
}

std::string train_run(const std::string& data_dir, const std::string& config, const std::string& out,
                      const std::string& protocol_name, const std::string& subject_name,
                      std::optional<std::uint64_t> seed) {
  RunConfig cfg = parse_config(config);
  if (seed) cfg.training.seed = *seed;
  const Protocol protocol = parse_protocol(protocol_name);
  const Dataset data = open_dataset(data_dir);
  const std::string subject = subject_name.empty() ? selected_subjects(cfg, data).front() : subject_name;

  RunOutput run;
  {
    py::gil_scoped_release release;
    run = run_once(data, cfg, protocol, subject, cfg.training.seed);
  }
  RetrievalReport rep;
  rep.protocol = protocol;
  rep.seeds = {cfg.training.seed};
  rep.runs = {run.record};
  rep.config = resolved_config_json(cfg, data);
  if (!out.empty()) {
    Checkpoint ckpt{run.training.model, cfg.training, run.training.best_epoch, run.training.best_val_loss,
                    run.training.rng_digest, json::object()};
    ckpt.extra = {{"subject", subject}, {"protocol", to_string(protocol)}, {"run_config", cfg.to_json()}};
    save_checkpoint(std::filesystem::path(out) / "checkpoint", ckpt);
  }
  return rep.to_json().dump();
}

std::string evaluate_runs(const std::string& data_dir, const std::string& config, const std::string& protocol,
                          int repeats, int threads) {
  const RunConfig cfg = parse_config(config);
  const Dataset data = open_dataset(data_dir);
  RetrievalReport rep;
  {
    py::gil_scoped_release release;
    rep = repeat_runs(data, cfg, parse_protocol(protocol), repeats > 0 ? repeats : cfg.training.n_repeats, threads);
  }
  rep.config = resolved_config_json(cfg, data);
  return rep.to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_hiervis, m) {
  m.doc() = "Native core of the hiervis package";

  static py::exception<Error> error(m, "HiervisError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  m.def("default_config", [] { return RunConfig{}.to_json().dump(); });

  m.def(
      "generate_synthetic",
      [](const std::string& spec, const std::string& out) {
        const SyntheticSpec s = spec.empty() ? SyntheticSpec{} : SyntheticSpec::from_json(json::parse(spec));
        save_dataset(DatasetLayout{out}, generate_synthetic(s));
      },
      py::arg("spec"), py::arg("out"));

  m.def("train", &train_run, py::arg("data"), py::arg("config"), py::arg("out"), py::arg("protocol"),
        py::arg("subject"), py::arg("seed"));
  m.def("evaluate", &evaluate_runs, py::arg("data"), py::arg("config"), py::arg("protocol"), py::arg("repeats"),
        py::arg("threads"));

  m.def(
      "topk_accuracy",
      [](const Mat& queries, const Mat& gallery, const std::vector<int>& truth, const std::vector<int>& ks) {
        return topk_accuracy(queries, gallery, truth, ks);
      },
      py::arg("queries"), py::arg("gallery"), py::arg("truth"), py::arg("ks"));

  m.def(
      "binarize",
      [](py::array_t<float, py::array::c_style | py::array::forcecast> s, float tau) {
        if (s.ndim() != 2) throw Error(ErrorKind::shape, "saliency must be 2-D");
        SaliencyMap map{static_cast<int>(s.shape(0)), static_cast<int>(s.shape(1)),
                        std::vector<float>(s.data(), s.data() + s.size())};
        const BinaryMask mask = binarize(map, tau);
        py::array_t<std::uint8_t> out({s.shape(0), s.shape(1)});
        std::copy(mask.values.begin(), mask.values.end(), out.mutable_data());
        return out;
      },
      py::arg("saliency"), py::arg("tau"));

  m.def(
      "infonce_loss",
      [](const Mat& features, const Mat& targets, double logit_scale, bool symmetric) {
        return infonce_loss(features, targets, logit_scale,
                            symmetric ? LossDirection::symmetric : LossDirection::eeg_to_img, false)
            .loss;
      },
      py::arg("features"), py::arg("targets"), py::arg("logit_scale"), py::arg("symmetric"));

  m.def("token_count", &stconv_token_count, py::arg("timepoints"), py::arg("temporal_kernel"),
        py::arg("temporal_stride"), py::arg("pool_kernel"), py::arg("pool_stride"));

  m.def(
      "count_parameters", [](const std::string& config) { return count_parameters(parse_config(config).model); },
      py::arg("config"));
  m.def(
      "accounting_report",
      [](const std::string& config) {
        const ModelConfig mc = parse_config(config).model;
        json rep = accounting_report(mc);
        rep["flops"] = to_json(estimate_flops(mc));
        return rep.dump();
      },
      py::arg("config"));
}
