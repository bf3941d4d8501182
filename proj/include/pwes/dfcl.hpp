#pragma once

#include <map>
#include <string>
#include <vector>

#include "pwes/mplg.hpp"
#include "pwes/types.hpp"

namespace pwes {

/// Region-level vectors for one class: the main vector over all rows plus up
/// to K chunk means, with the source row indices kept for backpropagation.
struct ClassRegions {
  bool present = false;
  bool partial = false;              // fewer rows than K chunks
  std::vector<Vec> vectors;          // [main, chunk 1, ..., chunk K]
  std::vector<std::vector<int>> rows;  // source rows per vector
};

struct RegionVectorSet {
  std::string video_id;
  std::vector<ClassRegions> per_class;  // C foreground classes + background
};

/// Rows of X selected by each pseudo-label column, in temporal order.
std::vector<std::vector<int>> mask_features(const Mat& fused,
                                            const PseudoLabelMatrix& labels);

/// Main vector plus K contiguous chunk means (earlier chunks larger).
ClassRegions dfs_region_vectors(const Mat& fused, const std::vector<int>& rows,
                                int num_regions);

RegionVectorSet build_region_vectors(const Mat& fused,
                                     const PseudoLabelMatrix& labels,
                                     const std::vector<int>& regions_per_class);

class MemoryBank {
 public:
  explicit MemoryBank(std::vector<int> regions_per_class)
      : regions_per_class_(std::move(regions_per_class)) {}

  /// Wholesale replacement of the video's stored vectors.
  void update(const RegionVectorSet& set);

  /// Positives: stored class-c vectors from other videos. Negatives: other
  /// foreground classes plus background, from other videos.
  std::pair<std::vector<Vec>, std::vector<Vec>> contrastive_sets(
      int anchor_class, const std::string& exclude_video) const;

  std::size_t size() const { return entries_.size(); }
  const std::vector<int>& regions_per_class() const {
    return regions_per_class_;
  }
  const std::map<std::string, RegionVectorSet>& entries() const {
    return entries_;
  }

  void save(const std::string& path) const;
  static MemoryBank load(const std::string& path);

 private:
  std::vector<int> regions_per_class_;  // K_c, background last
  std::map<std::string, RegionVectorSet> entries_;
};

}  // namespace pwes
