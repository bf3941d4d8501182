#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pwes/dfcl.hpp"
#include "pwes/network.hpp"
#include "pwes/types.hpp"

namespace pwes {

struct LossWeights {
  double lambda1 = 1.0;  // video-level classification
  double lambda2 = 1.0;  // snippet-level classification
  double lambda3 = 0.1;  // feature contrastive
  double lambda4 = 1.0;  // guide
  double lambda5 = 0.8;  // sparsity
  double mutual_weight = 1.0;  // unweighted in the joint objective
};

struct LossComponents {
  double mil1 = 0, mil2 = 0, scl = 0, fcl = 0, gui = 0, sps = 0, aml = 0;
};

double joint_loss(const LossComponents& c, const LossWeights& w);

/// Snippet labels combining point and pseudo labels; rows without any label
/// are excluded from the N_s average.
struct CombinedLabels {
  Mat labels;                     // T x (C+1), binary
  std::vector<char> labeled_row;  // row has at least one label
  int num_labeled = 0;            // N_s

  static CombinedLabels from(const Mat& point_labels, const Mat* pseudo);
};

// --- individual loss terms (values only) ---
double mil_loss_full(const Vec& pooled, const std::vector<double>& video_label);
double mil_loss_fg(const Vec& pooled_fg, const std::vector<double>& video_label_fg);
double snippet_cls_loss(const Mat& probs_cat, const CombinedLabels& labels);
double guide_loss(const Vec& attn, const Mat& tcam);
double sparsity_loss(const Vec& attn_raw, const Vec& attn_flow);
double mutual_loss(const Vec& attn_raw, const Vec& attn_flow);
double contrastive_loss(const RegionVectorSet& regions, const MemoryBank& bank,
                        double tau);

/// Contrastive inputs for the fused loss path: anchors are recomputed from the
/// current fused features via the stored row assignments so gradients flow.
struct ContrastiveContext {
  const MemoryBank* bank = nullptr;
  std::string video_id;
  const RegionVectorSet* regions = nullptr;  // row assignments of this video
  double tau = 1.0;
};

/// Frozen mutual-learning targets; the stop-gradient side of the mutual loss
/// is evaluated against these (finite-difference harness support).
struct MutualTargets {
  Vec raw, flow;
};

struct LossResult {
  LossComponents components;
  double joint = 0.0;
  OutputGrads grads;
  int active_anchors = 0;  // contrastive anchors with a non-empty positive set
};

/// Weighted joint loss with analytic gradients w.r.t. the network outputs.
/// Pseudo labels, bank contents, and pooling selections are treated as
/// constants of the current step.
LossResult compute_losses(const ScoreTensors& out,
                          const std::vector<double>& video_label,
                          const CombinedLabels& snippet_labels, int k_mil,
                          const LossWeights& weights,
                          const ContrastiveContext* contrastive,
                          const MutualTargets* frozen_mutual = nullptr);

}  // namespace pwes
