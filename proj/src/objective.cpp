#include "hiervis/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hiervis {

namespace {
const std::array<const char*, 3> kViewNames = {"BOM", "FO", "RS"};
}

std::string ViewSet::name() const {
  if (count() == 3) return "Triple";
  std::string out;
  for (int v = 0; v < 3; ++v) {
    if (!on[v]) continue;
    if (!out.empty()) out += "+";
    out += kViewNames[v];
  }
  return out;
}

ViewSet ViewSet::parse(const std::string& name) {
  if (name == "Triple") return all();
  ViewSet s;
  s.on = {false, false, false};
  std::size_t pos = 0;
  while (pos <= name.size()) {
    const auto next = name.find('+', pos);
    const std::string part = name.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    const auto it = std::find(kViewNames.begin(), kViewNames.end(), part);
    if (it == kViewNames.end()) throw Error(ErrorKind::config, "unknown view '" + part + "'");
    s.on[static_cast<std::size_t>(it - kViewNames.begin())] = true;
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return s;
}

std::vector<ViewSet> ViewSet::nonempty_subsets() {
  std::vector<ViewSet> out;
  for (int size = 1; size <= 3; ++size) {
    for (int mask = 1; mask < 8; ++mask) {
      if (__builtin_popcount(mask) != size) continue;
      ViewSet s;
      s.on = {bool(mask & 1), bool(mask & 2), bool(mask & 4)};
      out.push_back(s);
    }
  }
  return out;
}

RowVec concat_features(const RowVec& contour, const RowVec& object,
                                   const RowVec& context) {
  RowVec out(contour.size() + object.size() + context.size());
  out << contour, object, context;
  return out;
}

Mat concat_views(const HierarchicalFeatures& f, ViewSet views) {
  const Eigen::Index n = f.contour.rows();
  const Eigen::Index d = f.contour.cols();
  Mat out(n, d * views.count());
  Eigen::Index off = 0;
  for (int v = 0; v < 3; ++v) {
    if (!views.on[v]) continue;
    out.middleCols(off, d) = f.view(v);
    off += d;
  }
  return out;
}

Mat select_segments(const Mat& triple_rows, ViewSet views) {
  if (triple_rows.cols() % 3) throw Error(ErrorKind::shape, "triple rows must have 3*d columns");
  const Eigen::Index d = triple_rows.cols() / 3;
  if (views.count() == 3) return triple_rows;
  Mat out(triple_rows.rows(), d * views.count());
  Eigen::Index off = 0;
  for (int v = 0; v < 3; ++v) {
    if (!views.on[v]) continue;
    out.middleCols(off, d) = triple_rows.middleCols(v * d, d);
    off += d;
  }
  return out;
}

namespace {

Eigen::VectorXd row_norms(const MatD& m, const char* which) {
  Eigen::VectorXd n = m.rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    if (!(n(i) > 0.0)) {
      throw Error(ErrorKind::numeric, std::string("cosine: row ") + std::to_string(i) + " of " + which +
                                          " has zero norm");
    }
  }
  return n;
}

}  // namespace

Mat cosine_matrix(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::shape, "cosine: column counts differ");
  const MatD ad = a.cast<double>();
  const MatD bd = b.cast<double>();
  const Eigen::VectorXd na = row_norms(ad, "A");
  const Eigen::VectorXd nb = row_norms(bd, "B");
  MatD s = (ad * bd.transpose()).array().colwise() / na.array();
  s.array().rowwise() /= nb.transpose().array();
  return s.cwiseMax(-1.0).cwiseMin(1.0).cast<Real>();
}

InfoNceResult infonce_loss(const Mat& features, const Mat& targets, double logit_scale, LossDirection direction,
                           bool with_grad) {
  const Eigen::Index n = features.rows();
  if (n < 2) throw Error(ErrorKind::invalid_argument, "infonce: need at least 2 samples for a contrast");
  if (targets.rows() != n || targets.cols() != features.cols()) {
    throw Error(ErrorKind::shape, "infonce: features and targets must have equal shapes");
  }
  const double alpha = std::exp(logit_scale);
  if (!std::isfinite(alpha)) {
    throw Error(ErrorKind::numeric, "infonce: exp(logit_scale) overflowed; clamp logit_scale (<= ln 100)");
  }

  const MatD f = features.cast<double>();
  const MatD c = targets.cast<double>();
  const Eigen::VectorXd nf = row_norms(f, "features");
  const Eigen::VectorXd nc = row_norms(c, "targets");
  const MatD fh = f.array().colwise() / nf.array();
  const MatD ch = c.array().colwise() / nc.array();
  const MatD cos = fh * ch.transpose();
  const MatD logits = alpha * cos;
  if (!logits.allFinite()) {
    throw Error(ErrorKind::numeric, "infonce: non-finite logits; clamp logit_scale (<= ln 100)");
  }

  // Row-wise softmax (EEG -> image) and column-wise softmax (image -> EEG).
  auto softmax_rows = [](const MatD& z, double& loss) {
    MatD p(z.rows(), z.cols());
    loss = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const double mx = z.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
      const double s = e.sum();
      p.row(i) = e / s;
      loss += (mx + std::log(s)) - z(i, i);
    }
    loss /= static_cast<double>(z.rows());
    return p;
  };

  InfoNceResult r;
  double row_loss = 0.0;
  const MatD p_row = softmax_rows(logits, row_loss);
  MatD d_logits;
  const MatD eye = MatD::Identity(n, n);
  if (direction == LossDirection::eeg_to_img) {
    r.loss = row_loss;
    if (with_grad) d_logits = (p_row - eye) / static_cast<double>(n);
  } else {
    double col_loss = 0.0;
    const MatD p_col = softmax_rows(logits.transpose(), col_loss);
    r.loss = 0.5 * (row_loss + col_loss);
    if (with_grad) d_logits = 0.5 * ((p_row - eye) + (p_col - eye).transpose()) / static_cast<double>(n);
  }
  if (!std::isfinite(r.loss)) throw Error(ErrorKind::numeric, "infonce: non-finite loss");
  if (!with_grad) return r;

  r.d_logit_scale = (d_logits.array() * logits.array()).sum();
  const MatD d_cos = alpha * d_logits;
  const MatD d_fh = d_cos * ch;
  const MatD d_ch = d_cos.transpose() * fh;
  // Gradient through x / |x|: (g - <g, x_hat> x_hat) / |x|
  const Eigen::VectorXd proj_f = (d_fh.array() * fh.array()).rowwise().sum();
  const Eigen::VectorXd proj_c = (d_ch.array() * ch.array()).rowwise().sum();
  MatD df = d_fh - (fh.array().colwise() * proj_f.array()).matrix();
  df.array().colwise() /= nf.array();
  MatD dc = d_ch - (ch.array().colwise() * proj_c.array()).matrix();
  dc.array().colwise() /= nc.array();
  r.d_features = df.cast<Real>();
  r.d_targets = dc.cast<Real>();
  return r;
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<Param* const> params, double eps) {
  GradCheckReport report;
  for (Param* p : params) {
    Eigen::VectorXd numeric(p->size());
    for (Eigen::Index i = 0; i < p->size(); ++i) {
      Real& x = p->value.data()[i];
      const Real orig = x;
      // Divide by the step actually representable in the working precision.
      const Real hi = static_cast<Real>(orig + eps);
      const Real lo = static_cast<Real>(orig - eps);
      x = hi;
      const double up = loss();
      x = lo;
      const double down = loss();
      x = orig;
      numeric(i) = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
    }
    const Eigen::VectorXd analytic = Eigen::Map<const ColVec>(p->grad.data(), p->grad.size()).cast<double>();
    GradCheckEntry e;
    e.name = p->name;
    e.analytic_norm = analytic.norm();
    e.numeric_norm = numeric.norm();
    const double denom = std::max({e.analytic_norm, e.numeric_norm, std::numeric_limits<double>::min()});
    e.rel_error = (analytic - numeric).norm() / denom;
    if (report.entries.empty() || e.rel_error > report.worst) {
      report.worst = e.rel_error;
      report.worst_name = e.name;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace hiervis
