#pragma once

#include <utility>
#include <vector>

#include "qdm/detection.hpp"

namespace qdm {

// Score-ranked TP/FP flags plus how many ground-truth boxes exist. Concatenate
// per-image results with merge(); ranking stays globally score-descending.
struct MatchResult {
  std::vector<std::pair<double, bool>> ranked;  // (score, is_tp), score desc
  int gt_count = 0;
};

// Greedy in descending score: a detection is TP when its best-IoU unmatched
// ground truth clears the threshold; that ground truth is then consumed.
MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<BBox>& gts,
                             double iou_threshold = 0.5);

MatchResult merge(const MatchResult& a, const MatchResult& b);

struct PRPoint {
  double precision = 0, recall = 0;
};

std::vector<PRPoint> pr_curve(const MatchResult& m);

// Step-method area under the PR curve: sum of precision at each TP rank,
// divided by the ground-truth count. Throws when gt_count is zero.
double average_precision(const MatchResult& m);

}  // namespace qdm
