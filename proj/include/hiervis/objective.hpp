#pragma once

#include "hiervis/cahi.hpp"
#include "hiervis/common.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hiervis {

enum class View { contour = 0, object = 1, context = 2 };

// Subset of views entering the loss / retrieval. Segments are always concatenated in
// contour, object, context order.
struct ViewSet {
  std::array<bool, 3> on = {true, true, true};

  static ViewSet all() { return {}; }
  static ViewSet only(View v) {
    ViewSet s;
    s.on = {false, false, false};
    s.on[static_cast<int>(v)] = true;
    return s;
  }
  int count() const { return int(on[0]) + int(on[1]) + int(on[2]); }
  // "BOM", "FO", "RS", "Triple", or a '+'-joined combination such as "BOM+RS".
  std::string name() const;
  static ViewSet parse(const std::string& name);
  // All seven non-empty subsets, singles first.
  static std::vector<ViewSet> nonempty_subsets();
};

enum class LossDirection { eeg_to_img, symmetric };

inline const float kInitLogitScale = static_cast<float>(std::log(1.0 / 0.07));
inline const float kMaxLogitScale = static_cast<float>(std::log(100.0));

RowVec concat_features(const RowVec& contour, const RowVec& object,
                                   const RowVec& context);
// [B x count*d] from a feature batch.
Mat concat_views(const HierarchicalFeatures& f, ViewSet views);
// Selects the matching segments from rows laid out as [C_b | C_f | C_r].
Mat select_segments(const Mat& triple_rows, ViewSet views);

// Entry (i, j) = <a_i, b_j> / (|a_i| |b_j|). Throws on a zero-norm row, naming it.
Mat cosine_matrix(const Mat& a, const Mat& b);

struct InfoNceResult {
  double loss = 0.0;
  Mat d_features;  // dL/dF
  Mat d_targets;   // dL/dC
  double d_logit_scale = 0.0;
};

// logits = exp(logit_scale) * cos(F, C); cross-entropy against the diagonal.
InfoNceResult infonce_loss(const Mat& features, const Mat& targets, double logit_scale,
                           LossDirection direction = LossDirection::eeg_to_img, bool with_grad = true);

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  std::string worst_name;
};

// Central differences of `loss` over every element of every tensor, compared with the
// gradients already stored in `params[i]->grad`. Per-tensor error is
// |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|) in the Euclidean norm.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<Param* const> params, double eps = 1e-3);

}  // namespace hiervis
