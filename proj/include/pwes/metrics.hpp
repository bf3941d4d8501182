#pragma once

#include <map>
#include <string>
#include <vector>

#include "pwes/proposals.hpp"
#include "pwes/types.hpp"

namespace pwes {

struct MatchResult {
  int tp = 0, fp = 0, fn = 0;
  std::vector<std::pair<int, int>> pairs;  // (proposal index, gt index)
};

/// Greedy one-to-one matching, proposals in descending confidence; a proposal
/// takes the unmatched ground truth with the highest IoU if it reaches k_eval.
MatchResult match(const std::vector<Proposal>& proposals,
                  const std::vector<FrameInterval>& gts, double k_eval);

struct Counts {
  int tp = 0, fp = 0, fn = 0;
  void operator+=(const MatchResult& m) {
    tp += m.tp;
    fp += m.fp;
    fn += m.fn;
  }
  double recall() const { return tp + fn ? double(tp) / (tp + fn) : 0.0; }
  double precision() const { return tp + fp ? double(tp) / (tp + fp) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

struct EvalReport {
  Counts overall;       // from the optimal top set
  Counts me_union;      // F1(0.5): duration < 0.5 s vs ME GTs, all-tops union
  Counts me_union_1s;   // F1(1.0): duration < 1.0 s vs ME GTs
  Counts me_optimal;    // F1(p): ME proposals within the optimal set
  int optimal_top = 0;  // selected top value
  bool recall_defined = true;
  std::map<std::string, Counts> per_video;  // overall counts, optimal set
};

/// One video's proposals (deduplicated union over top values) and its
/// ground-truth intervals; ME/MaE tagging of GTs comes from duration.
struct VideoEval {
  std::string video_id;
  std::vector<Proposal> proposals;
  std::vector<FrameInterval> gts;
};

/// MEGC-style report over per-top proposal sets. The set for a top value k is
/// the cumulative set { p : p.k_src <= k }; the optimal set is the top value
/// with the best overall F1.
EvalReport f1_variants(const std::vector<VideoEval>& videos,
                       const std::vector<int>& top_set, double fps,
                       double k_eval = 0.5);

std::string report_table(const EvalReport& report);

}  // namespace pwes
