#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pwes/types.hpp"

namespace pwes {

VideoRecord load_video(const std::string& path);
void write_video(const std::string& path, const VideoRecord& record);

DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest);

/// y_v[c] = 1 iff some annotation carries class c; background entry is always 1.
std::vector<double> derive_video_labels(
    const std::vector<PointAnnotation>& annotations, int num_classes);

/// Sorted unique snippet indices floor(psi / g) of the annotated frames.
std::vector<int> annotation_snippet_indices(const VideoRecord& record);

/// Point labels as a T x C multi-hot matrix (annotations in one snippet merge).
Mat point_label_matrix(const VideoRecord& record, int num_classes);

enum class PointMode { kRandom, kApex };

/// One annotation per interval; class is derived from interval duration
/// (< 0.5 s => ME = class 0, else MaE = class 1).
std::vector<PointAnnotation> sample_point_labels(
    const std::vector<FrameInterval>& gt_intervals, PointMode mode,
    double fps, std::uint64_t seed);

struct SynthConfig {
  int num_videos = 40;
  int t_min = 90;
  int t_max = 110;
  int feature_dim = 32;   // D
  int num_classes = 2;    // C (ME, MaE)
  int snippet_len = 8;    // g
  double fps = 30.0;
  // per-class planted duration ranges in snippets; ME must stay < 0.5 s
  std::vector<std::pair<int, int>> duration_range = {{1, 1}, {2, 6}};
  double noise_sigma = 0.5;
  double bg_density = 0.8;          // >= 0.6
  double mean_scale = 2.0;          // magnitude of generated class means
  int max_events_per_video = 6;
  int num_subjects = 5;
  std::string dataset_name = "synthetic";
};

struct SynthDataset {
  std::vector<VideoRecord> videos;
  DatasetManifest manifest;  // paths left empty until written to disk
};

/// Deterministic planted-interval dataset; both modalities share the class
/// means but draw independent noise.
SynthDataset synth_dataset(const SynthConfig& config, std::uint64_t seed);

/// Writes every video container plus the manifest under out_dir.
DatasetManifest write_dataset(const SynthDataset& dataset,
                              const std::string& out_dir);

}  // namespace pwes
