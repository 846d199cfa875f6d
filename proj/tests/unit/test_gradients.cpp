#include "toy.hpp"

#include <doctest.h>

#include <type_traits>

using namespace hiervis;

namespace {

// float32 differences at eps 1e-3 bottom out near 1e-3 relative (one-ulp loss noise plus
// curvature), so the tight check runs in the double build.
constexpr bool kDouble = std::is_same_v<Real, double>;
constexpr double kEps = kDouble ? 1e-6 : 1e-3;
constexpr double kTol = kDouble ? 1e-6 : 2e-2;

struct GradFixture {
  ModelConfig cfg = test::toy_config();
  Model model{cfg};
  Mat windows;
  Mat targets;
  int batch = 4;

  GradFixture(ViewSet views, LossDirection dir, Mode mode) : views(views), dir(dir), mode(mode) {
    model.init(11);
    // Move logit scale away from its initial value so its gradient is generic.
    model.logit_scale.value(0, 0) = 1.3f;
    const auto eeg = test::random_eeg(batch, cfg.encoder.channels, cfg.encoder.timepoints, 5);
    windows = window_trials(eeg, cfg.encoder).rows;
    targets = test::random_mat(batch, 3 * cfg.embed_dim, 6);
  }

  double loss(bool backward) {
    Rng rng(99);
    return batch_loss(model, windows, batch, targets, views, dir, mode, &rng, backward).loss;
  }

  GradCheckReport check() {
    model.zero_grad();
    loss(true);
    const auto params = model.params();
    return grad_check([&] { return loss(false); }, params, kEps);
  }

  ViewSet views;
  LossDirection dir;
  Mode mode;
};

void require_ok(const GradCheckReport& r) {
  for (const auto& e : r.entries) {
    INFO(e.name << " rel " << e.rel_error << " |a| " << e.analytic_norm << " |n| " << e.numeric_norm);
    CHECK(e.rel_error <= kTol);
  }
}

}  // namespace

TEST_CASE("full graph gradients match finite differences in train mode") {
  GradFixture f(ViewSet::all(), LossDirection::eeg_to_img, Mode::train);
  require_ok(f.check());
}

TEST_CASE("symmetric loss gradients match finite differences") {
  GradFixture f(ViewSet::all(), LossDirection::symmetric, Mode::train);
  require_ok(f.check());
}

TEST_CASE("view-subset gradients leave unused heads at zero") {
  GradFixture f(ViewSet::only(View::object), LossDirection::eeg_to_img, Mode::train);
  const auto r = f.check();
  require_ok(r);
  for (auto* p : f.model.params()) {
    if (p->name.rfind("head.context", 0) == 0 || p->name.rfind("head.contour", 0) == 0) {
      CHECK(p->grad.cwiseAbs().maxCoeff() == 0.0f);
    }
  }
}

TEST_CASE("value_from_query and multi-layer gradients") {
  GradFixture f(ViewSet::all(), LossDirection::eeg_to_img, Mode::train);
  f.cfg.attention.kv_source = KvSource::value_from_query;
  f.cfg.attention.n_layers = 2;
  f.model = Model(f.cfg);
  f.model.init(3);
  require_ok(f.check());
}

TEST_CASE("bypassed attention gradients") {
  GradFixture f(ViewSet::all(), LossDirection::eeg_to_img, Mode::train);
  f.cfg.attention.enabled = false;
  f.model = Model(f.cfg);
  f.model.init(4);
  require_ok(f.check());
}
