#pragma once

#include <vector>

#include "pwes/types.hpp"

namespace pwes {

struct MplgConfig {
  double k_ratio = 0.3;  // in (0, 0.3]
  double theta = 0.8;    // foreground threshold in (0, 1)

  void validate() const {
    if (!(k_ratio > 0.0 && k_ratio <= 0.3))
      throw ConfigError("mplg k_ratio must be in (0, 0.3]");
    if (!(theta > 0.0 && theta < 1.0))
      throw ConfigError("mplg theta must be in (0, 1)");
  }
  /// Selecting scope: max(1, floor(k_ratio * T)), capped at floor(0.3 T).
  int scope(int T) const {
    int k = std::max(1, static_cast<int>(k_ratio * T));
    const int cap = std::max(1, static_cast<int>(0.3 * T));
    return std::min(k, cap);
  }
};

enum class LabelSource : int { kNone = 0, kPoint = 1, kMined = 2 };

struct PseudoLabelMatrix {
  Mat labels;  // T x (C+1), binary; background is the last column
  std::vector<LabelSource> row_source;  // per snippet

  int num_snippets() const { return static_cast<int>(labels.rows()); }
};

/// Cosine similarities of every snippet against the labeled snippets, plus
/// the per-snippet maximum min-max normalized to [0,1] over time.
struct SimilarityResult {
  Mat sim;      // T x |B1|
  Vec sim_max;  // length T, normalized
};

SimilarityResult foreground_similarity(const Mat& fused,
                                       const std::vector<int>& labeled);
Vec refine_attention(const Vec& attn, const Vec& sim_max);
std::vector<char> topk_foreground_mask(const Vec& refined_attn, int k);

struct Prototypes {
  Mat centers;               // C x D'
  std::vector<char> absent;  // per class
};
Prototypes class_prototypes(const Mat& fused, const Mat& point_labels);
Mat class_weights(const Mat& fused, const Prototypes& protos);

Mat refine_tcam(const Mat& tcam_fg, const std::vector<char>& mask,
                const Mat& weights);
Mat temporal_prune(const Mat& refined, const Mat& tcam_fg);
Mat foreground_labels(const Mat& refined, double theta);
/// Indices of the background-labeled snippets: the lowest-attention snippets
/// outside the foreground rows, min(2k, T-k) of them.
std::vector<char> background_labels(const Vec& attn, int k,
                                    const std::vector<char>& foreground_rows);

/// The full seven-step mining pass.
PseudoLabelMatrix mplg(const Mat& fused, const Mat& point_labels,
                       const Mat& tcam_fg, const Vec& attn,
                       const MplgConfig& cfg);

}  // namespace pwes
