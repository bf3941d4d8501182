#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pwes/dfcl.hpp"
#include "pwes/metrics.hpp"
#include "pwes/mplg.hpp"
#include "pwes/network.hpp"
#include "pwes/objectives.hpp"
#include "pwes/tensors_io.hpp"

namespace pwes {

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string manifest_path;
  std::string out_dir = "out";
  NetConfig net;
  LossWeights loss;
  MplgConfig mplg;
  double tau = 1.0;
  std::vector<int> regions_per_class = {2, 3, 10};  // ME, MaE, background
  std::vector<int> top_set;  // empty: ratio ladder per video length
  double nms_threshold = 0.01;
  double oic_inflation = 0.25;
  double k_eval = 0.5;
  int pretrain_iters = 80;
  int total_iters = 1000;
  int batch_size = 8;
  double learning_rate = 0.0005;
  int mplg_every = 1;     // mining cadence after pretraining
  bool enable_mplg = true;  // ablation switch: no mining, no bank
  std::uint64_t seed = 0;
  std::string supervision = "random";  // or "apex"
  std::optional<std::string> holdout_subject;

  void validate() const;
  std::string config_hash() const;

  static RunConfig from_json_file(const std::string& path);
};

struct LosoFold {
  std::string subject;
  std::vector<ManifestEntry> train_videos;
  std::vector<ManifestEntry> test_videos;
};

std::vector<LosoFold> loso_splits(const DatasetManifest& manifest);

struct TrainResult {
  ModelParams params;
  std::string checkpoint_path;
  std::string bank_path;
  std::string log_path;
};

/// Full training loop: pretraining phase on point labels only, then per-step
/// MPLG mining, bank updates, and the complete joint objective.
TrainResult train(const RunConfig& cfg);

/// Forward every (optionally subject-filtered) video, emit scored proposals
/// and an attention trace for plotting. Returns the proposals path.
std::string infer(const RunConfig& cfg, const ModelParams& params,
                  const std::optional<std::string>& only_subject);

std::vector<VideoEval> load_proposals(const std::string& proposals_path,
                                      const DatasetManifest& manifest);

/// Metrics over a proposal file plus per-video timeline plots (SVG).
EvalReport report(const RunConfig& cfg, const std::string& proposals_path,
                  bool write_plots);

/// Per-video pseudo-label dump for inspection (the `mine` subcommand).
void mine_pseudo_labels(const RunConfig& cfg, const ModelParams& params,
                        const std::string& out_path);

}  // namespace pwes
