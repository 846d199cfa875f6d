#include "../oracles.hpp"
#include "toy.hpp"

#include "hiervis/cahi.hpp"
#include "hiervis/encoder.hpp"
#include "hiervis/model.hpp"
#include "hiervis/objective.hpp"

#include <doctest.h>

#include <cmath>

using namespace hiervis;

TEST_CASE("token count follows the sliding-window law") {
  CHECK(stconv_token_count(100, 25, 1, 51, 5) == 6);
  CHECK(stconv_token_count(250, 25, 1, 51, 5) == 36);
  for (int T : {30, 64, 100, 101, 250})
    for (int Kt : {1, 5, 25})
      for (int St : {1, 2})
        for (int Kp : {1, 7, 51})
          for (int Sp : {1, 3, 5}) {
            const int expect = oracle::token_count(T, Kt, St, Kp, Sp);
            if (expect < 1) {
              CHECK_THROWS_AS(stconv_token_count(T, Kt, St, Kp, Sp), Error);
            } else {
              CHECK(stconv_token_count(T, Kt, St, Kp, Sp) == expect);
            }
          }
}

TEST_CASE("pooled windows equal convolution followed by average pooling") {
  STConvParams p;
  p.channels = 3;
  p.timepoints = 30;
  p.temporal_kernel = 4;
  p.temporal_stride = 2;
  p.pool_kernel = 3;
  p.pool_stride = 2;
  const Mat e = test::random_mat(p.channels, p.timepoints, 2);
  const Mat w = test::random_mat(1, p.temporal_kernel, 3);
  const Mat pooled = pooled_windows(e.data(), p) * w.transpose();

  const int T1 = oracle::window_count(p.timepoints, p.temporal_kernel, p.temporal_stride);
  const int L = oracle::window_count(T1, p.pool_kernel, p.pool_stride);
  REQUIRE(pooled.rows() == L * p.channels);
  for (int l = 0; l < L; ++l) {
    for (int c = 0; c < p.channels; ++c) {
      double acc = 0.0;
      for (int t = l * p.pool_stride; t < l * p.pool_stride + p.pool_kernel; ++t) {
        double conv = 0.0;
        for (int k = 0; k < p.temporal_kernel; ++k) conv += double(w(0, k)) * e(c, t * p.temporal_stride + k);
        acc += conv / p.pool_kernel;
      }
      CHECK(pooled(l * p.channels + c, 0) == doctest::Approx(acc).epsilon(1e-5));
    }
  }
}

TEST_CASE("stconv_forward token shape") {
  const ModelConfig cfg = test::toy_config();
  StconvStream s(cfg.encoder, "s");
  Rng rng(1);
  s.init(rng);
  const auto eeg = test::random_eeg(1, cfg.encoder.channels, cfg.encoder.timepoints, 3);
  const Mat tok = stconv_forward(eeg.trial(0), s, Mode::eval);
  CHECK(tok.rows() == cfg.encoder.token_count());
  CHECK(tok.cols() == cfg.encoder.proj_dim);
}

TEST_CASE("cross-attention matches the loop oracle") {
  for (int m : {4, 8})
    for (int h : {1, 2})
      for (int Ll = 1; Ll <= 3; ++Ll)
        for (int Lu = 1; Lu <= 3; ++Lu)
          for (bool vq : {false, true}) {
            if (vq && Ll != Lu) continue;
            AttentionParams p;
            p.heads = h;
            p.kv_source = vq ? KvSource::value_from_query : KvSource::lower;
            CrossAttention a(m, p, "a");
            Rng rng(static_cast<std::uint64_t>(m * 100 + h * 10 + Ll));
            a.init(rng);
            a.bo.value = test::random_mat(1, m, 4, 0.1f);
            const int batch = 2;
            const Mat lower = test::random_mat(batch * Ll, m, 5);
            const Mat upper = test::random_mat(batch * Lu, m, 6);
            const Mat out = a.forward(lower, upper, batch, nullptr);
            const int dk = p.resolved_head_dim(m);
            const MatD ref = oracle::cross_attention(lower, upper, batch, a, h, dk, 1.0 / std::sqrt(double(dk)), vq);
            CHECK((out.cast<double>() - ref).cwiseAbs().maxCoeff() <= 1e-6);
          }
}

TEST_CASE("bottom-up flow: lower views ignore higher-view weights") {
  ModelConfig cfg = test::toy_config();
  Model model(cfg);
  model.init(3);
  const auto eeg = test::random_eeg(3, cfg.encoder.channels, cfg.encoder.timepoints, 8);
  const Mat w = window_trials(eeg, cfg.encoder).rows;
  const HierarchicalFeatures base = model.forward(w, 3, Mode::eval, nullptr, nullptr);

  Model perturbed = model;
  perturbed.encoder.streams[2].temporal.value.array() += 0.3f;
  perturbed.cahi.projections[1].weight.value.array() += 0.3f;
  const HierarchicalFeatures f = perturbed.forward(w, 3, Mode::eval, nullptr, nullptr);
  CHECK(f.contour == base.contour);
  CHECK(f.object != base.object);
  CHECK(f.context != base.context);

  Model lower = model;
  lower.encoder.streams[0].temporal.value.array() += 0.3f;
  const HierarchicalFeatures g = lower.forward(w, 3, Mode::eval, nullptr, nullptr);
  CHECK(g.object != base.object);
  CHECK(g.context != base.context);
}

TEST_CASE("disabled attention bypasses integration") {
  ModelConfig cfg = test::toy_config();
  cfg.attention.enabled = false;
  Model model(cfg);
  model.init(4);
  const auto eeg = test::random_eeg(2, cfg.encoder.channels, cfg.encoder.timepoints, 9);
  const Mat w = window_trials(eeg, cfg.encoder).rows;
  const auto tokens = model.encoder.forward(w, 2, Mode::eval, nullptr, nullptr);
  const HierarchicalFeatures f = model.forward(w, 2, Mode::eval, nullptr, nullptr);
  for (int v = 0; v < 3; ++v) {
    CHECK((f.view(v) - model.cahi.projections[static_cast<std::size_t>(v)].forward(tokens[static_cast<std::size_t>(v)], 2))
              .cwiseAbs()
              .maxCoeff() == 0.0f);
  }
}

TEST_CASE("eval mode is deterministic, train mode dropout is seeded") {
  const ModelConfig cfg = test::toy_config();
  Model model(cfg);
  model.init(5);
  const auto eeg = test::random_eeg(4, cfg.encoder.channels, cfg.encoder.timepoints, 1);
  const Mat w = window_trials(eeg, cfg.encoder).rows;
  CHECK(model.forward(w, 4, Mode::eval, nullptr, nullptr).object == model.forward(w, 4, Mode::eval, nullptr, nullptr).object);
  Rng a(1), b(1), c(2);
  const Mat fa = model.forward(w, 4, Mode::train, &a, nullptr).context;
  CHECK(fa == model.forward(w, 4, Mode::train, &b, nullptr).context);
  CHECK(fa != model.forward(w, 4, Mode::train, &c, nullptr).context);
}

TEST_CASE("InfoNCE closed forms") {
  for (int n : {2, 4, 8}) {
    const Mat eye = Mat::Identity(n, n);
    for (double alpha : {0.5, 1.0, 2.0}) {
      const auto r = infonce_loss(eye, eye, std::log(alpha), LossDirection::eeg_to_img, false);
      CHECK(std::abs(r.loss - oracle::aligned_infonce(n, alpha)) <= 1e-6);
      const auto s = infonce_loss(eye, eye, std::log(alpha), LossDirection::symmetric, false);
      CHECK(std::abs(s.loss - oracle::aligned_infonce(n, alpha)) <= 1e-6);
    }
    const Mat ones = Mat::Ones(n, 3);
    CHECK(std::abs(infonce_loss(ones, ones, 0.7, LossDirection::eeg_to_img, false).loss - std::log(double(n))) <= 1e-6);
  }
}

TEST_CASE("InfoNCE input validation") {
  const Mat a = test::random_mat(3, 4, 1);
  Mat z = a;
  z.row(1).setZero();
  CHECK_THROWS_AS(infonce_loss(z, a, 0.0), Error);
  CHECK_THROWS_AS(infonce_loss(a, test::random_mat(2, 4, 2), 0.0), Error);
  CHECK_THROWS_AS(cosine_matrix(a, test::random_mat(3, 5, 2)), Error);
}

TEST_CASE("view sets name and select segments") {
  CHECK(ViewSet::all().name() == "Triple");
  CHECK(ViewSet::only(View::contour).name() == "BOM");
  CHECK(ViewSet::parse("BOM+RS").count() == 2);
  CHECK(ViewSet::nonempty_subsets().size() == 7);
  Mat rows(1, 6);
  rows << 1, 2, 3, 4, 5, 6;
  const Mat sel = select_segments(rows, ViewSet::parse("BOM+RS"));
  CHECK(sel.cols() == 4);
  CHECK(sel(0, 2) == 5);
}
