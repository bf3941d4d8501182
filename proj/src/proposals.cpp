#include "pwes/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "pwes/network.hpp"

namespace pwes {

std::vector<int> default_top_set(int T) {
  std::set<int> ks;
  for (int i = 1; i <= 10; ++i) {
    int k = static_cast<int>(std::lround(0.05 * i * T));
    k = std::clamp(k, 1, T);
    ks.insert(k);
  }
  return {ks.begin(), ks.end()};
}

std::vector<Proposal> multi_top_proposals(const Vec& attn, int snippet_len,
                                          const std::vector<int>& top_set) {
  const int T = static_cast<int>(attn.size());
  std::map<std::pair<int, int>, int> span_to_k;
  for (int k : top_set) {
    if (k < 1 || k > T) throw ConfigError("multi_top: top value out of range");
    std::vector<int> sel = topk_indices(attn, k);
    std::sort(sel.begin(), sel.end());
    size_t i = 0;
    while (i < sel.size()) {
      size_t j = i;
      while (j + 1 < sel.size() && sel[j + 1] == sel[j] + 1) ++j;
      const std::pair<int, int> span{sel[i], sel[j]};
      auto it = span_to_k.find(span);
      if (it == span_to_k.end())
        span_to_k[span] = k;
      else
        it->second = std::min(it->second, k);
      i = j + 1;
    }
  }
  std::vector<Proposal> out;
  for (const auto& [span, k] : span_to_k) {
    Proposal p;
    p.onset = span.first * snippet_len;
    p.offset = (span.second + 1) * snippet_len - 1;
    p.k_src = k;
    out.push_back(p);
  }
  return out;
}

std::vector<double> oic_score(const Proposal& p, const Mat& tcam_sup,
                              int snippet_len, double inflation) {
  const int T = static_cast<int>(tcam_sup.rows());
  const int C = static_cast<int>(tcam_sup.cols());
  const int a = p.onset / snippet_len;
  const int b = p.offset / snippet_len;
  if (a < 0 || b >= T || a > b)
    throw DataError("oic_score: proposal outside video bounds");
  const int len = b - a + 1;
  const int margin = std::max(1, static_cast<int>(std::lround(inflation * len)));
  const int lo = std::max(0, a - margin);
  const int hi = std::min(T - 1, b + margin);

  std::vector<double> phi(static_cast<size_t>(C), 0.0);
  for (int c = 0; c < C; ++c) {
    double inner = 0.0;
    for (int t = a; t <= b; ++t) inner += tcam_sup(t, c);
    inner /= len;
    double outer = 0.0;
    int outer_n = 0;
    for (int t = lo; t <= hi; ++t) {
      if (t >= a && t <= b) continue;
      outer += tcam_sup(t, c);
      ++outer_n;
    }
    phi[static_cast<size_t>(c)] = outer_n > 0 ? inner - outer / outer_n : inner;
  }
  return phi;
}

double temporal_iou(const FrameInterval& a, const FrameInterval& b) {
  if (a.onset > a.offset || b.onset > b.offset)
    throw DataError("temporal_iou: malformed interval");
  const int inter = std::min(a.offset, b.offset) -
                    std::max(a.onset, b.onset) + 1;
  if (inter <= 0) return 0.0;
  const int uni = a.length() + b.length() - inter;
  return static_cast<double>(inter) / uni;
}

std::vector<Proposal> nms(std::vector<Proposal> proposals,
                          double iou_threshold) {
  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const Proposal& x, const Proposal& y) {
                     if (x.score() != y.score()) return x.score() > y.score();
                     if (x.onset != y.onset) return x.onset < y.onset;
                     return x.offset > y.offset;  // longer span first
                   });
  std::vector<Proposal> kept;
  for (const auto& p : proposals) {
    bool suppressed = false;
    for (const auto& q : kept) {
      if (temporal_iou({p.onset, p.offset}, {q.onset, q.offset}) >
          iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

int classify_by_duration(const Proposal& p, double fps) {
  return p.duration_seconds(fps) < 0.5 ? 0 : 1;
}

}  // namespace pwes
