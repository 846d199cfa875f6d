#pragma once

#include "../unit/toy.hpp"

#include "hiervis/model.hpp"
#include "hiervis/objective.hpp"

namespace hiervis::acceptance {

// Finite-difference check of the full graph (encoder, integration, InfoNCE) on a
// 4-sample toy batch in train mode. Dropout masks are re-seeded for every evaluation.
inline GradCheckReport full_graph_gradcheck(double eps, std::uint64_t seed = 0) {
  const ModelConfig cfg = test::toy_config();
  Model model(cfg);
  model.init(seed);
  const int batch = 4;
  const auto eeg = test::random_eeg(batch, cfg.encoder.channels, cfg.encoder.timepoints, seed + 100);
  const Mat windows = window_trials(eeg, cfg.encoder).rows;
  const Mat targets = test::random_mat(batch, 3 * cfg.embed_dim, seed + 200);
  auto loss = [&](bool backward) {
    Rng rng(seed + 300);
    return batch_loss(model, windows, batch, targets, ViewSet::all(), LossDirection::eeg_to_img, Mode::train, &rng,
                      backward)
        .loss;
  };
  model.zero_grad();
  loss(true);
  const auto params = model.params();
  return grad_check([&] { return loss(false); }, params, eps);
}

}  // namespace hiervis::acceptance
