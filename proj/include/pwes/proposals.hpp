#pragma once

#include <vector>

#include "pwes/types.hpp"

namespace pwes {

struct Proposal {
  int onset = 0;   // inclusive frames, snippet-aligned
  int offset = 0;
  int label = -1;  // assigned by duration after scoring
  std::vector<double> confidence;  // phi, length C
  int k_src = 0;   // smallest top value that produced this span

  double score() const {
    double best = 0.0;
    for (size_t i = 0; i < confidence.size(); ++i)
      if (i == 0 || confidence[i] > best) best = confidence[i];
    return best;
  }
  double duration_seconds(double fps) const {
    return (offset - onset + 1) / fps;
  }
};

/// Maximal consecutive runs of the top-k attention snippets, unioned over the
/// k values; exact duplicate spans keep the smallest k.
std::vector<Proposal> multi_top_proposals(const Vec& attn, int snippet_len,
                                          const std::vector<int>& top_set);

/// Default top-value ladder: round(rho * T) for rho in {0.05, ..., 0.50}.
std::vector<int> default_top_set(int T);

/// Outer-inner confidence per class: inner mean minus inflated-outer mean.
std::vector<double> oic_score(const Proposal& p, const Mat& tcam_sup,
                              int snippet_len, double inflation);

/// Greedy NMS on max-confidence scores; ties by earlier onset, longer span.
std::vector<Proposal> nms(std::vector<Proposal> proposals,
                          double iou_threshold);

/// ME (< 0.5 s) = class 0, else MaE = class 1.
int classify_by_duration(const Proposal& p, double fps);

double temporal_iou(const FrameInterval& a, const FrameInterval& b);

}  // namespace pwes
