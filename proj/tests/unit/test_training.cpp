#include "../oracles.hpp"
#include "toy.hpp"

#include "hiervis/config.hpp"
#include "hiervis/evaluation.hpp"
#include "hiervis/tensor_file.hpp"
#include "hiervis/training.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace hiervis;
namespace fs = std::filesystem;

namespace {

struct ToyData {
  ModelConfig cfg = test::toy_config();
  PairedTrials train;
  PairedTrials val;

  ToyData() {
    auto eeg = test::random_eeg(12, cfg.encoder.channels, cfg.encoder.timepoints, 21);
    const Mat emb = test::random_mat(12, 3 * cfg.embed_dim, 22);
    auto split = split_validation(eeg, 4, 1);
    train = make_pairs(split.train, emb, cfg.encoder);
    val = make_pairs(split.val, emb, cfg.encoder);
  }

  TrainConfig tcfg() const {
    TrainConfig t;
    t.batch_size = 4;
    t.max_epochs = 3;
    t.val_size = 4;
    return t;
  }
};

}  // namespace

TEST_CASE("adam matches a hand-computed trajectory") {
  Param p("x", 1, 2);
  p.value << 1.0f, -2.0f;
  Adam opt({&p}, 0.1, 0.9, 0.999, 1e-8);
  double x[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 3; ++t) {
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * (x[i] - 0.5);
      p.grad(0, i) = static_cast<Real>(2.0 * (double(p.value(0, i)) - 0.5));
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    opt.step();
    for (int i = 0; i < 2; ++i) CHECK(double(p.value(0, i)) == doctest::Approx(x[i]).epsilon(1e-6));
  }
}

TEST_CASE("clip_grad_norm rescales to the limit") {
  Param a("a", 1, 2), b("b", 1, 1);
  a.grad << 3.0f, 0.0f;
  b.grad << 4.0f;
  std::vector<Param*> ps = {&a, &b};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(double(a.grad(0, 0)) == doctest::Approx(0.6));
  CHECK(double(b.grad(0, 0)) == doctest::Approx(0.8));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  ToyData d;
  Model model(d.cfg);
  model.init(1);
  TrainConfig t = d.tcfg();
  t.learning_rate = 0.0;
  Model before = model;
  const TrainResult r = train(model, d.train, d.val, t);
  auto pa = before.params();
  auto pb = const_cast<Model&>(r.model).params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
}

TEST_CASE("training is deterministic and improves the toy loss") {
  ToyData d;
  TrainConfig t = d.tcfg();
  t.max_epochs = 8;
  Model a(d.cfg), b(d.cfg);
  a.init(2);
  b.init(2);
  const TrainResult ra = train(a, d.train, d.val, t);
  const TrainResult rb = train(b, d.train, d.val, t);
  CHECK(ra.rng_digest == rb.rng_digest);
  CHECK(ra.best_epoch == rb.best_epoch);
  auto pa = const_cast<Model&>(ra.model).params();
  auto pb = const_cast<Model&>(rb.model).params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
  CHECK(ra.history.back().train_loss < ra.history.front().train_loss);
  CHECK(ra.best_val_loss <= ra.history.front().val_loss);
  for (const Param* p : pa)
    if (p->name == "logit_scale") CHECK(p->value(0, 0) <= kMaxLogitScale);
}

TEST_CASE("checkpoint round trip") {
  ToyData d;
  Model model(d.cfg);
  model.init(3);
  const TrainResult r = train(model, d.train, d.val, d.tcfg());
  const fs::path dir = fs::temp_directory_path() / "hiervis-unit-ckpt";
  fs::remove_all(dir);
  Checkpoint ck{r.model, d.tcfg(), r.best_epoch, r.best_val_loss, r.rng_digest, {{"note", "x"}}};
  save_checkpoint(dir, ck);
  const Checkpoint back = load_checkpoint(dir);
  CHECK(back.epoch == r.best_epoch);
  CHECK(back.rng_digest == r.rng_digest);
  CHECK(back.extra["note"] == "x");
  const Mat w = d.val.windows.rows;
  CHECK(back.model.forward(w, d.val.size(), Mode::eval, nullptr, nullptr).context ==
        r.model.forward(w, d.val.size(), Mode::eval, nullptr, nullptr).context);

  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  CHECK(manifest["format_version"] == kCheckpointVersion);
  for (const auto& t : manifest["tensors"]) {
    CHECK(sha256_hex(read_file(dir / t["file"].get<std::string>())) == t["sha256"]);
  }

  // A corrupted tensor must be detected.
  const std::string first = manifest["tensors"][0]["file"];
  std::string bytes = read_file(dir / first);
  bytes.back() ^= 0x1;
  write_file_atomic(dir / first, bytes);
  CHECK_THROWS_AS(load_checkpoint(dir), Error);
}

TEST_CASE("config documents are strict and round trip") {
  CHECK_THROWS_AS(RunConfig::from_json({{"bogus", 1}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json({{"training", {{"lr", 0.1}}}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json({{"encoder", {{"n_filters", "many"}}}}), Error);
  CHECK_THROWS_AS(RunConfig::from_json({{"decomposition", {{"mask_threshold", 2.0}}}}), Error);

  RunConfig c;
  c.training.learning_rate = 1e-3;
  c.model.attention.heads = 2;
  c.training.views = ViewSet::parse("FO+RS");
  c.evaluation.k = {1, 5};
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(RunConfig::from_json(nlohmann::json::object()).to_json() == RunConfig{}.to_json());
  CHECK(parse_protocol("dep") == Protocol::subject_dependent);
  CHECK_THROWS_AS(parse_protocol("cross"), Error);
}

TEST_CASE("topk accuracy matches the exhaustive ranking oracle") {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 30; ++inst) {
    const int g = 2 + static_cast<int>(rng() % 15);
    const int n = 1 + static_cast<int>(rng() % 10);
    Mat gallery = test::random_mat(g, 4, rng());
    const Mat q = test::random_mat(n, 4, rng());
    if (inst % 3 == 0) gallery.row(1) = gallery.row(0);  // exact ties
    std::vector<int> truth;
    for (int i = 0; i < n; ++i) truth.push_back(static_cast<int>(rng() % g));
    const std::vector<int> ks = {1, 3, 5};
    const auto acc = topk_accuracy(q, gallery, truth, ks);
    for (int k : ks) CHECK(acc.at(k) == doctest::Approx(oracle::topk(q, gallery, truth, k)));
  }
}

TEST_CASE("rank ties favour the lower index") {
  const std::vector<double> s = {0.5, 0.9, 0.9, 0.1};
  CHECK(rank_of(s, 1) == 0);
  CHECK(rank_of(s, 2) == 1);
  CHECK(rank_of(s, 0) == 2);
  CHECK_THROWS_AS(rank_of(s, 4), Error);
}

TEST_CASE("rsm groups rows by category") {
  const Mat f = test::random_mat(4, 3, 1);
  const std::vector<std::string> labels = {"Food", "Animal", "Food", "Other"};
  const RSMatrix r = compute_rsm(f, labels);
  CHECK(r.order == std::vector<int>{1, 0, 2, 3});
  CHECK(r.blocks.size() == 3);
  CHECK(r.blocks[1] == std::pair<std::string, int>{"Food", 1});
  for (int i = 0; i < 4; ++i) CHECK(double(r.values(i, i)) == doctest::Approx(1.0));
  CHECK((r.values - r.values.transpose()).cwiseAbs().maxCoeff() == 0.0f);
  CHECK_THROWS_AS(compute_rsm(f, std::vector<std::string>{"Food", "Plant", "Food", "Other"}), Error);
}

TEST_CASE("parameter accounting reconciles its ledger") {
  const ModelConfig cfg = test::toy_config();
  Model m(cfg);
  const ParameterCount pc = count_parameters(m);
  long long sum = 0;
  for (const Param* p : m.params()) sum += p->size();
  CHECK(pc.total == sum);
  long long modules = 0;
  for (const auto& mc : pc.modules) modules += mc.count;
  CHECK(modules == sum);

  const auto rep = accounting_report(ModelConfig{});
  long long reconciled = rep["total"].get<long long>();
  for (const auto& a : rep["assumptions"]) {
    CHECK(!a["design_decision"].get<std::string>().empty());
    if (a["included_in_reconciliation"].get<bool>()) reconciled += a["delta"].get<long long>();
  }
  CHECK(rep["reconciled_total"].get<long long>() == reconciled);
  CHECK(rep["unexplained_residual"].get<long long>() == kReferenceParameterCount - reconciled);

  const FlopEstimate f = estimate_flops(ModelConfig{});
  CHECK(f.flops == 2 * f.macs);
  ModelConfig no_att;
  no_att.attention.enabled = false;
  CHECK(estimate_flops(no_att).macs < f.macs);
}

TEST_CASE("duplicate gallery entries tie regardless of batch position") {
  Mat gallery = test::random_mat(3, 7, 6);
  gallery.row(2) = gallery.row(0);
  const Mat q = test::random_mat(10, 7, 5);
  const auto batch = ranked_lists(q, gallery, 3);
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const Mat row = q.row(i);
    CHECK(ranked_lists(row, gallery, 3)[0] == batch[static_cast<std::size_t>(i)]);
    const auto& l = batch[static_cast<std::size_t>(i)];
    CHECK(std::find(l.begin(), l.end(), 0) < std::find(l.begin(), l.end(), 2));
  }
}
