#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pwes/types.hpp"

namespace pwes {

struct NetConfig {
  int feature_dim = 32;    // D
  int embed_dim = 16;      // D'
  int num_classes = 2;     // C (foreground)
  double k_mil_ratio = 0.125;  // pooling k = max(1, floor(ratio * T))

  int k_mil(int T) const {
    int k = static_cast<int>(k_mil_ratio * T);
    if (k < 1) k = 1;
    if (k > T) k = T;
    return k;
  }
};

/// One modality branch: temporal conv (kernel 3, D -> D') + ReLU embedding,
/// then a kernel-1 attention head (D' -> 1) + sigmoid.
struct ModalityParams {
  Mat enc_w[3];  // D' x D, taps for offsets -1, 0, +1
  Vec enc_b;     // D'
  Vec att_w;     // D'
  double att_b = 0.0;
};

struct ModelParams {
  NetConfig cfg;
  ModalityParams raw;
  ModalityParams flow;
  Mat fuse_w;  // D' x 2D'
  Vec fuse_b;  // D'
  Mat cls_w;   // (C+1) x D'
  Vec cls_b;   // C+1

  /// Visits every parameter scalar in declared (checkpoint) order.
  void for_each(const std::function<void(double&)>& fn);
  void for_each(const std::function<void(const double&)>& fn) const;
  std::size_t num_params() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& values);

  static ModelParams zeros_like(const NetConfig& cfg);
  /// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], seed-controlled.
  static ModelParams init(const NetConfig& cfg, std::uint64_t seed);
};

struct ScoreTensors {
  Vec attn_raw;   // A_r, length T
  Vec attn_flow;  // A_f
  Vec attn;       // A = 0.5 (A_r + A_f)
  Mat fused;      // X, T x D'
  Mat tcam;       // S, T x (C+1), background is the last column
  Mat tcam_sup;   // S_hat, T x C
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  Mat in_raw, in_flow;        // inputs as doubles, T x D
  Mat pre_raw, pre_flow;      // pre-ReLU embeddings, T x D'
  Mat emb_raw, emb_flow;      // post-ReLU
  Mat pre_fuse;               // pre-ReLU fused, T x D'
  ScoreTensors out;
};

ForwardCache forward(const VideoRecord& record, const ModelParams& params);

/// Gradients of some scalar loss w.r.t. the forward outputs. tcam_sup
/// contributions are folded into tcam/attn by the backward pass.
struct OutputGrads {
  Mat d_tcam;       // T x (C+1), zero-sized means zero
  Mat d_tcam_sup;   // T x C
  Vec d_attn;       // on A
  Vec d_attn_raw;   // direct terms on A_r (sparsity, mutual)
  Vec d_attn_flow;
  Mat d_fused;      // T x D'
};

ModelParams backward(const ForwardCache& cache, const ModelParams& params,
                     const OutputGrads& grads);

/// Per class: mean of the k largest column entries, ties to lower index.
Vec topk_pool(const Mat& scores, int k);
/// Row indices of the k largest entries (ties to lower index), unsorted order
/// of selection is by descending value.
std::vector<int> topk_indices(const Vec& values, int k);

/// S_hat[t,c] = S[t,c] * A[t] with the background column dropped.
Mat suppress_tcam(const Mat& tcam, const Vec& attn);

void save_checkpoint(const std::string& path, const ModelParams& params,
                     std::uint64_t seed, const std::string& config_hash);
ModelParams load_checkpoint(const std::string& path, std::uint64_t* seed_out,
                            std::string* config_hash_out);

}  // namespace pwes
