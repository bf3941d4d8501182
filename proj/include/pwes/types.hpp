#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pwes {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
// container files store features as row-major float32
using MatF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One annotated frame: timestamp (frame index) plus a foreground class index.
struct PointAnnotation {
  int psi = 0;    // frame index, 0 <= psi < L
  int label = 0;  // class index in [0, C); never the background class

  std::vector<double> one_hot(int num_classes) const {
    std::vector<double> y(static_cast<size_t>(num_classes) + 1, 0.0);
    y[static_cast<size_t>(label)] = 1.0;
    return y;
  }
};

/// Inclusive frame interval [onset, offset].
struct FrameInterval {
  int onset = 0;
  int offset = 0;
  int length() const { return offset - onset + 1; }
};

struct VideoRecord {
  std::string video_id;
  MatF features_raw;   // T x D
  MatF features_flow;  // T x D
  int frame_count = 0; // L
  double fps = 30.0;
  int snippet_len = 8; // g
  std::vector<PointAnnotation> annotations;
  std::optional<std::vector<FrameInterval>> gt_intervals;

  int num_snippets() const { return static_cast<int>(features_raw.rows()); }
  int feature_dim() const { return static_cast<int>(features_raw.cols()); }
};

struct ManifestEntry {
  std::string video_id;
  std::string subject_id;
  std::string path;
};

struct DatasetManifest {
  std::string dataset;
  double fps = 30.0;
  int snippet_len = 8;
  std::vector<std::string> class_names; // foreground classes, ME first
  std::vector<ManifestEntry> videos;

  int num_classes() const { return static_cast<int>(class_names.size()); }
};

}  // namespace pwes
