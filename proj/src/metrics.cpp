#include "pwes/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace pwes {

MatchResult match(const std::vector<Proposal>& proposals,
                  const std::vector<FrameInterval>& gts, double k_eval) {
  if (!(k_eval > 0.0 && k_eval <= 1.0))
    throw ConfigError("match: k_eval must be in (0, 1]");
  std::vector<int> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&proposals](int a, int b) {
    return proposals[static_cast<size_t>(a)].score() >
           proposals[static_cast<size_t>(b)].score();
  });
  std::vector<char> gt_taken(gts.size(), 0);
  MatchResult r;
  for (int pi : order) {
    const auto& p = proposals[static_cast<size_t>(pi)];
    int best_gt = -1;
    double best_iou = 0.0;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_taken[gi]) continue;
      const double iou = temporal_iou({p.onset, p.offset}, gts[gi]);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = static_cast<int>(gi);
      }
    }
    if (best_gt >= 0 && best_iou >= k_eval) {
      gt_taken[static_cast<size_t>(best_gt)] = 1;
      r.pairs.emplace_back(pi, best_gt);
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = static_cast<int>(gts.size()) - r.tp;
  return r;
}

namespace {

std::vector<FrameInterval> me_gts(const std::vector<FrameInterval>& gts,
                                  double fps) {
  std::vector<FrameInterval> out;
  for (const auto& g : gts)
    if (g.length() / fps < 0.5) out.push_back(g);
  return out;
}

std::vector<Proposal> filter_duration(const std::vector<Proposal>& props,
                                      double fps, double max_seconds) {
  std::vector<Proposal> out;
  for (const auto& p : props)
    if (p.duration_seconds(fps) < max_seconds) out.push_back(p);
  return out;
}

std::vector<Proposal> cumulative_set(const std::vector<Proposal>& props,
                                     int top_value) {
  std::vector<Proposal> out;
  for (const auto& p : props)
    if (p.k_src <= top_value) out.push_back(p);
  return out;
}

}  // namespace

EvalReport f1_variants(const std::vector<VideoEval>& videos,
                       const std::vector<int>& top_set, double fps,
                       double k_eval) {
  EvalReport rep;
  std::size_t total_gts = 0;
  for (const auto& v : videos) total_gts += v.gts.size();
  rep.recall_defined = total_gts > 0;

  // optimal top value: the cumulative set with the best overall F1
  double best_f1 = -1.0;
  for (int k : top_set) {
    Counts c;
    for (const auto& v : videos)
      c += match(cumulative_set(v.proposals, k), v.gts, k_eval);
    if (c.f1() > best_f1) {
      best_f1 = c.f1();
      rep.optimal_top = k;
    }
  }
  for (const auto& v : videos) {
    const auto set = cumulative_set(v.proposals, rep.optimal_top);
    const MatchResult m = match(set, v.gts, k_eval);
    rep.overall += m;
    rep.per_video[v.video_id] += m;
    rep.me_optimal +=
        match(filter_duration(set, fps, 0.5), me_gts(v.gts, fps), k_eval);
    // union-of-tops ME variants
    rep.me_union += match(filter_duration(v.proposals, fps, 0.5),
                          me_gts(v.gts, fps), k_eval);
    rep.me_union_1s += match(filter_duration(v.proposals, fps, 1.0),
                             me_gts(v.gts, fps), k_eval);
  }
  return rep;
}

std::string report_table(const EvalReport& report) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << "F1(0.5)  F1(1.0)  F1(p)    REC      PRE      F1\n";
  os << report.me_union.f1() << "    " << report.me_union_1s.f1() << "    "
     << report.me_optimal.f1() << "    " << report.overall.recall() << "    "
     << report.overall.precision() << "    " << report.overall.f1() << "\n";
  if (!report.recall_defined) os << "(recall undefined: no ground truths)\n";
  return os.str();
}

}  // namespace pwes
