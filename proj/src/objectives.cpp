#include "pwes/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace pwes {

namespace {

constexpr double kEps = 1e-7;

double clamp_prob(double p) { return std::clamp(p, kEps, 1.0 - kEps); }
bool in_clamp(double p) { return p > kEps && p < 1.0 - kEps; }

Vec normalized_or_zero(const Vec& v) {
  const double n = v.norm();
  return n > 0.0 ? Vec(v / n) : Vec(Vec::Zero(v.size()));
}

}  // namespace

double joint_loss(const LossComponents& c, const LossWeights& w) {
  return w.lambda1 * (c.mil1 + c.mil2) + w.lambda2 * c.scl +
         w.lambda3 * c.fcl + w.lambda4 * c.gui + w.lambda5 * c.sps +
         w.mutual_weight * c.aml;
}

CombinedLabels CombinedLabels::from(const Mat& point_labels, const Mat* pseudo) {
  CombinedLabels out;
  out.labels = Mat::Zero(point_labels.rows(), point_labels.cols() + 1);
  for (Eigen::Index t = 0; t < point_labels.rows(); ++t)
    for (Eigen::Index c = 0; c < point_labels.cols(); ++c)
      if (point_labels(t, c) > 0.0) out.labels(t, c) = 1.0;
  if (pseudo) {
    if (pseudo->rows() != out.labels.rows() ||
        pseudo->cols() != out.labels.cols())
      throw ShapeError("combined labels: pseudo shape mismatch");
    for (Eigen::Index t = 0; t < out.labels.rows(); ++t)
      for (Eigen::Index c = 0; c < out.labels.cols(); ++c)
        if ((*pseudo)(t, c) > 0.0) out.labels(t, c) = 1.0;
  }
  out.labeled_row.assign(static_cast<size_t>(out.labels.rows()), 0);
  for (Eigen::Index t = 0; t < out.labels.rows(); ++t) {
    if (out.labels.row(t).sum() > 0.0) {
      out.labeled_row[static_cast<size_t>(t)] = 1;
      ++out.num_labeled;
    }
  }
  return out;
}

double mil_loss_full(const Vec& pooled,
                     const std::vector<double>& video_label) {
  if (static_cast<size_t>(pooled.size()) != video_label.size())
    throw ShapeError("mil_loss_full: length mismatch");
  double loss = 0.0;
  for (Eigen::Index c = 0; c < pooled.size(); ++c)
    loss -= video_label[static_cast<size_t>(c)] *
            std::log(clamp_prob(pooled[c]));
  return loss;
}

double mil_loss_fg(const Vec& pooled_fg,
                   const std::vector<double>& video_label_fg) {
  if (static_cast<size_t>(pooled_fg.size()) != video_label_fg.size())
    throw ShapeError("mil_loss_fg: length mismatch");
  double loss = 0.0;
  for (Eigen::Index c = 0; c < pooled_fg.size(); ++c)
    loss -= video_label_fg[static_cast<size_t>(c)] *
            std::log(clamp_prob(pooled_fg[c]));
  return loss;
}

double snippet_cls_loss(const Mat& probs_cat, const CombinedLabels& labels) {
  if (probs_cat.rows() != labels.labels.rows() ||
      probs_cat.cols() != labels.labels.cols())
    throw ShapeError("snippet_cls_loss: shape mismatch");
  if (labels.num_labeled == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index t = 0; t < probs_cat.rows(); ++t) {
    if (!labels.labeled_row[static_cast<size_t>(t)]) continue;
    for (Eigen::Index c = 0; c < probs_cat.cols(); ++c) {
      const double s = clamp_prob(probs_cat(t, c));
      if (labels.labels(t, c) > 0.0)
        loss -= (1.0 - s) * (1.0 - s) * std::log(s);
      else
        loss -= s * s * std::log(1.0 - s);
    }
  }
  return loss / labels.num_labeled;
}

double guide_loss(const Vec& attn, const Mat& tcam) {
  if (attn.size() != tcam.rows())
    throw ShapeError("guide_loss: length mismatch");
  const Eigen::Index bg = tcam.cols() - 1;
  double loss = 0.0;
  for (Eigen::Index t = 0; t < attn.size(); ++t)
    loss += std::abs(attn[t] - (1.0 - tcam(t, bg)));
  return loss / static_cast<double>(attn.size());
}

double sparsity_loss(const Vec& attn_raw, const Vec& attn_flow) {
  return 0.5 * (attn_raw.mean() + attn_flow.mean());
}

double mutual_loss(const Vec& attn_raw, const Vec& attn_flow) {
  if (attn_raw.size() != attn_flow.size())
    throw ShapeError("mutual_loss: length mismatch");
  const double t = static_cast<double>(attn_raw.size());
  const double mse = (attn_raw - attn_flow).squaredNorm() / t;
  return 0.5 * mse + 0.5 * mse;  // each side against a detached target
}

namespace {

struct AnchorRef {
  int cls = 0;
  const std::vector<int>* rows = nullptr;
};

/// Contrastive loss over anchors drawn from this video's foreground region
/// vectors; optionally accumulates d(loss)/d(fused rows).
double contrastive_core(const std::vector<AnchorRef>& anchors, const Mat& fused,
                        const MemoryBank& bank, const std::string& exclude,
                        double tau, Mat* d_fused, int* active_out) {
  if (tau <= 0.0) throw ConfigError("contrastive loss: tau must be positive");
  double loss = 0.0;
  int active = 0;
  struct Term {
    Vec d_anchor_raw;  // gradient w.r.t. the un-normalized anchor
    const std::vector<int>* rows;
  };
  std::vector<Term> terms;

  for (const auto& anchor : anchors) {
    Vec raw = Vec::Zero(fused.cols());
    for (int t : *anchor.rows) raw += fused.row(t).transpose();
    raw /= static_cast<double>(anchor.rows->size());
    const double norm = raw.norm();
    if (norm == 0.0) continue;
    const Vec u = raw / norm;

    auto [pos, neg] = bank.contrastive_sets(anchor.cls, exclude);
    if (pos.empty()) continue;  // anchor skipped
    ++active;

    double z_pos = 0.0, z_all = 0.0;
    Vec num_grad = Vec::Zero(u.size());   // sum_j a_j p_j over positives
    Vec den_grad = Vec::Zero(u.size());   // over positives and negatives
    auto accumulate = [&](const std::vector<Vec>& vs, bool positive) {
      for (const auto& v : vs) {
        const Vec vh = normalized_or_zero(v);
        const double e = std::exp(u.dot(vh) / tau);
        z_all += e;
        den_grad += e * vh;
        if (positive) {
          z_pos += e;
          num_grad += e * vh;
        }
      }
    };
    accumulate(pos, true);
    accumulate(neg, false);
    loss += -std::log(z_pos / z_all);

    if (d_fused) {
      const Vec d_u = (den_grad / z_all - num_grad / z_pos) / tau;
      // through the L2 normalization of the anchor
      const Vec d_raw = (d_u - u * u.dot(d_u)) / norm;
      terms.push_back({d_raw, anchor.rows});
    }
  }
  if (active == 0) {
    if (active_out) *active_out = 0;
    return 0.0;
  }
  loss /= active;
  if (d_fused) {
    for (const auto& term : terms) {
      const double scale =
          1.0 / (active * static_cast<double>(term.rows->size()));
      for (int t : *term.rows)
        d_fused->row(t) += scale * term.d_anchor_raw.transpose();
    }
  }
  if (active_out) *active_out = active;
  return loss;
}

std::vector<AnchorRef> foreground_anchors(const RegionVectorSet& regions) {
  std::vector<AnchorRef> anchors;
  const int background = static_cast<int>(regions.per_class.size()) - 1;
  for (int c = 0; c < background; ++c) {
    const auto& cr = regions.per_class[static_cast<size_t>(c)];
    if (!cr.present) continue;
    for (const auto& rows : cr.rows) anchors.push_back({c, &rows});
  }
  return anchors;
}

}  // namespace

double contrastive_loss(const RegionVectorSet& regions, const MemoryBank& bank,
                        double tau) {
  if (tau <= 0.0) throw ConfigError("contrastive loss: tau must be positive");
  double loss = 0.0;
  int active = 0;
  const int background = static_cast<int>(regions.per_class.size()) - 1;
  for (int c = 0; c < background; ++c) {
    const auto& cr = regions.per_class[static_cast<size_t>(c)];
    if (!cr.present) continue;
    for (const auto& q : cr.vectors) {
      const Vec u = normalized_or_zero(q);
      if (u.norm() == 0.0) continue;
      auto [pos, neg] = bank.contrastive_sets(c, regions.video_id);
      if (pos.empty()) continue;
      double z_pos = 0.0, z_all = 0.0;
      for (const auto& v : pos) {
        const double e = std::exp(u.dot(normalized_or_zero(v)) / tau);
        z_pos += e;
        z_all += e;
      }
      for (const auto& v : neg)
        z_all += std::exp(u.dot(normalized_or_zero(v)) / tau);
      loss += -std::log(z_pos / z_all);
      ++active;
    }
  }
  return active > 0 ? loss / active : 0.0;
}

LossResult compute_losses(const ScoreTensors& out,
                          const std::vector<double>& video_label,
                          const CombinedLabels& snippet_labels, int k_mil,
                          const LossWeights& weights,
                          const ContrastiveContext* contrastive,
                          const MutualTargets* frozen_mutual) {
  const int T = static_cast<int>(out.tcam.rows());
  const int C = static_cast<int>(out.tcam.cols()) - 1;
  LossResult r;
  r.grads.d_tcam = Mat::Zero(T, C + 1);
  r.grads.d_tcam_sup = Mat::Zero(T, C);
  r.grads.d_attn = Vec::Zero(T);
  r.grads.d_attn_raw = Vec::Zero(T);
  r.grads.d_attn_flow = Vec::Zero(T);
  r.grads.d_fused = Mat::Zero(T, out.fused.cols());

  // video-level MIL, full class set
  {
    const Vec p1 = topk_pool(out.tcam, k_mil);
    r.components.mil1 = mil_loss_full(p1, video_label);
    for (int c = 0; c <= C; ++c) {
      if (video_label[static_cast<size_t>(c)] == 0.0 || !in_clamp(p1[c]))
        continue;
      const double dp = -weights.lambda1 / p1[c] / k_mil;
      for (int t : topk_indices(out.tcam.col(c), k_mil))
        r.grads.d_tcam(t, c) += dp;
    }
  }
  // video-level MIL on the suppressed TCAM, foreground only
  {
    const Vec p2 = topk_pool(out.tcam_sup, k_mil);
    std::vector<double> y_fg(video_label.begin(), video_label.end() - 1);
    r.components.mil2 = mil_loss_fg(p2, y_fg);
    for (int c = 0; c < C; ++c) {
      if (y_fg[static_cast<size_t>(c)] == 0.0 || !in_clamp(p2[c])) continue;
      const double dp = -weights.lambda1 / p2[c] / k_mil;
      for (int t : topk_indices(out.tcam_sup.col(c), k_mil))
        r.grads.d_tcam_sup(t, c) += dp;
    }
  }
  // snippet-level classification on [S_hat fg | S bg]
  {
    Mat cat(T, C + 1);
    cat.leftCols(C) = out.tcam_sup;
    cat.col(C) = out.tcam.col(C);
    r.components.scl = snippet_cls_loss(cat, snippet_labels);
    if (snippet_labels.num_labeled > 0) {
      const double scale = weights.lambda2 / snippet_labels.num_labeled;
      for (int t = 0; t < T; ++t) {
        if (!snippet_labels.labeled_row[static_cast<size_t>(t)]) continue;
        for (int c = 0; c <= C; ++c) {
          const double s = cat(t, c);
          if (!in_clamp(s)) continue;
          double ds;
          if (snippet_labels.labels(t, c) > 0.0)
            ds = scale * (2.0 * (1.0 - s) * std::log(s) -
                          (1.0 - s) * (1.0 - s) / s);
          else
            ds = scale * (-2.0 * s * std::log(1.0 - s) + s * s / (1.0 - s));
          if (c < C)
            r.grads.d_tcam_sup(t, c) += ds;
          else
            r.grads.d_tcam(t, C) += ds;
        }
      }
    }
  }
  // feature contrastive learning against the memory bank
  if (contrastive && contrastive->bank && contrastive->regions) {
    Mat d_fcl = Mat::Zero(T, out.fused.cols());
    const auto anchors = foreground_anchors(*contrastive->regions);
    r.components.fcl = contrastive_core(
        anchors, out.fused, *contrastive->bank, contrastive->video_id,
        contrastive->tau, &d_fcl, &r.active_anchors);
    r.grads.d_fused += weights.lambda3 * d_fcl;
  }
  // guide: attention vs (1 - background probability)
  {
    r.components.gui = guide_loss(out.attn, out.tcam);
    const double scale = weights.lambda4 / T;
    for (int t = 0; t < T; ++t) {
      const double diff = out.attn[t] - (1.0 - out.tcam(t, C));
      const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      r.grads.d_attn[t] += scale * sgn;
      r.grads.d_tcam(t, C) += scale * sgn;
    }
  }
  // sparsity
  {
    r.components.sps = sparsity_loss(out.attn_raw, out.attn_flow);
    const double scale = weights.lambda5 * 0.5 / T;
    r.grads.d_attn_raw.array() += scale;
    r.grads.d_attn_flow.array() += scale;
  }
  // mutual learning with stop-gradient targets
  {
    const Vec& target_flow = frozen_mutual ? frozen_mutual->flow : out.attn_flow;
    const Vec& target_raw = frozen_mutual ? frozen_mutual->raw : out.attn_raw;
    const double t = static_cast<double>(T);
    r.components.aml =
        0.5 * (out.attn_raw - target_flow).squaredNorm() / t +
        0.5 * (out.attn_flow - target_raw).squaredNorm() / t;
    r.grads.d_attn_raw += weights.mutual_weight / t *
                          (out.attn_raw - target_flow);
    r.grads.d_attn_flow += weights.mutual_weight / t *
                           (out.attn_flow - target_raw);
  }

  r.joint = joint_loss(r.components, weights);
  return r;
}

}  // namespace pwes
