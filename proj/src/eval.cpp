#include "qdm/eval.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace qdm {

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].score > dets[j].score;
  });

  MatchResult r;
  r.gt_count = static_cast<int>(gts.size());
  std::vector<char> taken(gts.size(), 0);
  for (std::size_t oi : order) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (taken[gi]) continue;
      const double v = iou(dets[oi].box, gts[gi]);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    const bool tp = best_gt >= 0 && best >= iou_threshold;
    if (tp) taken[best_gt] = 1;
    r.ranked.emplace_back(dets[oi].score, tp);
  }
  return r;
}

MatchResult merge(const MatchResult& a, const MatchResult& b) {
  MatchResult r;
  r.gt_count = a.gt_count + b.gt_count;
  r.ranked.reserve(a.ranked.size() + b.ranked.size());
  r.ranked.insert(r.ranked.end(), a.ranked.begin(), a.ranked.end());
  r.ranked.insert(r.ranked.end(), b.ranked.begin(), b.ranked.end());
  std::stable_sort(r.ranked.begin(), r.ranked.end(),
                   [](const auto& x, const auto& y) { return x.first > y.first; });
  return r;
}

std::vector<PRPoint> pr_curve(const MatchResult& m) {
  std::vector<PRPoint> pts;
  pts.reserve(m.ranked.size());
  int tp = 0;
  for (std::size_t rank = 0; rank < m.ranked.size(); ++rank) {
    if (m.ranked[rank].second) ++tp;
    pts.push_back({static_cast<double>(tp) / static_cast<double>(rank + 1),
                   m.gt_count > 0 ? static_cast<double>(tp) / m.gt_count : 0.0});
  }
  return pts;
}

double average_precision(const MatchResult& m) {
  if (m.gt_count <= 0) throw std::invalid_argument("no ground truth boxes");
  double sum = 0.0;
  int tp = 0;
  for (std::size_t rank = 0; rank < m.ranked.size(); ++rank)
    if (m.ranked[rank].second) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  return sum / m.gt_count;
}

}  // namespace qdm
