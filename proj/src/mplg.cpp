#include "pwes/mplg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pwes/network.hpp"

namespace pwes {

SimilarityResult foreground_similarity(const Mat& fused,
                                       const std::vector<int>& labeled) {
  if (labeled.empty())
    throw DataError("foreground_similarity: no labeled snippets");
  const Eigen::Index T = fused.rows();
  SimilarityResult r;
  r.sim.resize(T, static_cast<Eigen::Index>(labeled.size()));
  for (Eigen::Index t = 0; t < T; ++t) {
    const double nt = fused.row(t).norm();
    for (size_t n = 0; n < labeled.size(); ++n) {
      const auto b = fused.row(labeled[n]);
      const double nb = b.norm();
      r.sim(t, static_cast<Eigen::Index>(n)) =
          (nt == 0.0 || nb == 0.0) ? 0.0 : fused.row(t).dot(b) / (nt * nb);
    }
  }
  Vec raw_max = r.sim.rowwise().maxCoeff();
  const double lo = raw_max.minCoeff();
  const double hi = raw_max.maxCoeff();
  if (hi - lo <= 0.0) {
    r.sim_max = Vec::Ones(T);  // degenerate range keeps A' = A
  } else {
    r.sim_max = (raw_max.array() - lo) / (hi - lo);
  }
  return r;
}

Vec refine_attention(const Vec& attn, const Vec& sim_max) {
  if (attn.size() != sim_max.size())
    throw ShapeError("refine_attention: length mismatch");
  return attn.cwiseProduct(sim_max);
}

std::vector<char> topk_foreground_mask(const Vec& refined_attn, int k) {
  std::vector<char> mask(static_cast<size_t>(refined_attn.size()), 0);
  for (int t : topk_indices(refined_attn, k)) mask[static_cast<size_t>(t)] = 1;
  return mask;
}

Prototypes class_prototypes(const Mat& fused, const Mat& point_labels) {
  const Eigen::Index C = point_labels.cols();
  Prototypes p;
  p.centers = Mat::Zero(C, fused.cols());
  p.absent.assign(static_cast<size_t>(C), 1);
  for (Eigen::Index c = 0; c < C; ++c) {
    int count = 0;
    Vec acc = Vec::Zero(fused.cols());
    for (Eigen::Index t = 0; t < point_labels.rows(); ++t) {
      if (point_labels(t, c) > 0.0) {
        acc += fused.row(t).transpose();
        ++count;
      }
    }
    if (count > 0) {
      p.centers.row(c) = (acc / count).transpose();
      p.absent[static_cast<size_t>(c)] = 0;
    }
  }
  return p;
}

Mat class_weights(const Mat& fused, const Prototypes& protos) {
  const Eigen::Index T = fused.rows();
  const Eigen::Index C = protos.centers.rows();
  Mat w = Mat::Zero(T, C);
  std::vector<int> present;
  for (Eigen::Index c = 0; c < C; ++c)
    if (!protos.absent[static_cast<size_t>(c)])
      present.push_back(static_cast<int>(c));
  if (present.empty()) return w;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (present.size() == 1) {
      w(t, present[0]) = 1.0;
      continue;
    }
    // softmax over present classes of the L2 distances to each prototype
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> dist(present.size());
    for (size_t i = 0; i < present.size(); ++i) {
      dist[i] = (fused.row(t) - protos.centers.row(present[i])).norm();
      mx = std::max(mx, dist[i]);
    }
    double denom = 0.0;
    for (double& d : dist) {
      d = std::exp(d - mx);
      denom += d;
    }
    for (size_t i = 0; i < present.size(); ++i)
      w(t, present[i]) = dist[i] / denom;
  }
  return w;
}

Mat refine_tcam(const Mat& tcam_fg, const std::vector<char>& mask,
                const Mat& weights) {
  if (tcam_fg.rows() != weights.rows() || tcam_fg.cols() != weights.cols() ||
      static_cast<size_t>(tcam_fg.rows()) != mask.size())
    throw ShapeError("refine_tcam: shape mismatch");
  Mat out = tcam_fg.cwiseProduct(weights);
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    if (!mask[static_cast<size_t>(t)]) out.row(t).setZero();
  return out;
}

Mat temporal_prune(const Mat& refined, const Mat& tcam_fg) {
  if (refined.rows() != tcam_fg.rows() || refined.cols() != tcam_fg.cols())
    throw ShapeError("temporal_prune: shape mismatch");
  Mat out = refined;
  const Vec col_mean = tcam_fg.colwise().mean();
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      if (out(t, c) < col_mean[c]) out(t, c) = 0.0;
  return out;
}

Mat foreground_labels(const Mat& refined, double theta) {
  if (!(theta > 0.0 && theta < 1.0))
    throw ConfigError("foreground_labels: theta must be in (0,1)");
  Mat y = Mat::Zero(refined.rows(), refined.cols());
  for (Eigen::Index t = 0; t < refined.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < refined.cols(); ++c)
      if (refined(t, c) > refined(t, best)) best = c;  // ties keep lower index
    if (refined(t, best) > theta) y(t, best) = 1.0;
  }
  return y;
}

std::vector<char> background_labels(const Vec& attn, int k,
                                    const std::vector<char>& foreground_rows) {
  const int T = static_cast<int>(attn.size());
  if (static_cast<size_t>(T) != foreground_rows.size())
    throw ShapeError("background_labels: shape mismatch");
  const int want = std::min(2 * k, T - k);
  std::vector<int> eligible;
  for (int t = 0; t < T; ++t)
    if (!foreground_rows[static_cast<size_t>(t)]) eligible.push_back(t);
  std::stable_sort(eligible.begin(), eligible.end(),
                   [&attn](int a, int b) { return attn[a] < attn[b]; });
  std::vector<char> bkg(static_cast<size_t>(T), 0);
  const int n = std::min<int>(want, static_cast<int>(eligible.size()));
  for (int i = 0; i < n; ++i) bkg[static_cast<size_t>(eligible[i])] = 1;
  return bkg;
}

PseudoLabelMatrix mplg(const Mat& fused, const Mat& point_labels,
                       const Mat& tcam_fg, const Vec& attn,
                       const MplgConfig& cfg) {
  cfg.validate();
  const int T = static_cast<int>(fused.rows());
  const int C = static_cast<int>(point_labels.cols());
  if (tcam_fg.rows() != T || tcam_fg.cols() != C || attn.size() != T)
    throw ShapeError("mplg: shape mismatch");

  std::vector<int> labeled;
  for (int t = 0; t < T; ++t)
    if (point_labels.row(t).sum() > 0.0) labeled.push_back(t);
  if (labeled.empty())
    throw DataError("mplg: video has no point annotations");

  const int k = cfg.scope(T);

  // step 1: fold labeled-feature similarity into the attention scores
  const SimilarityResult sim = foreground_similarity(fused, labeled);
  const Vec refined_attn = refine_attention(attn, sim.sim_max);
  // step 2: coarse foreground mask from the top-k refined scores
  const std::vector<char> mask = topk_foreground_mask(refined_attn, k);
  // step 3: class-prototype modulation of the TCAM
  const Prototypes protos = class_prototypes(fused, point_labels);
  const Mat weights = class_weights(fused, protos);
  Mat refined = refine_tcam(tcam_fg, mask, weights);
  // step 4: drop entries below the original per-class temporal mean
  refined = temporal_prune(refined, tcam_fg);
  // step 5: threshold the per-row argmax into foreground labels
  Mat fg = foreground_labels(refined, cfg.theta);

  PseudoLabelMatrix out;
  out.labels = Mat::Zero(T, C + 1);
  out.row_source.assign(static_cast<size_t>(T), LabelSource::kNone);
  for (int t = 0; t < T; ++t) {
    for (int c = 0; c < C; ++c) out.labels(t, c) = fg(t, c);
    if (fg.row(t).sum() > 0.0)
      out.row_source[static_cast<size_t>(t)] = LabelSource::kMined;
  }
  // annotated snippets keep exactly their annotated classes
  for (int t : labeled) {
    for (int c = 0; c < C; ++c) out.labels(t, c) = point_labels(t, c);
    out.row_source[static_cast<size_t>(t)] = LabelSource::kPoint;
  }

  // step 6: background from the lowest original attention, foreground wins
  std::vector<char> fg_rows(static_cast<size_t>(T), 0);
  for (int t = 0; t < T; ++t)
    if (out.labels.row(t).head(C).sum() > 0.0)
      fg_rows[static_cast<size_t>(t)] = 1;
  const std::vector<char> bkg = background_labels(attn, k, fg_rows);
  for (int t = 0; t < T; ++t) {
    if (bkg[static_cast<size_t>(t)]) {
      out.labels(t, C) = 1.0;
      if (out.row_source[static_cast<size_t>(t)] == LabelSource::kNone)
        out.row_source[static_cast<size_t>(t)] = LabelSource::kMined;
    }
  }
  return out;
}

}  // namespace pwes
