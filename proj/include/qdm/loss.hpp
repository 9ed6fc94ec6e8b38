#pragma once

#include <cstdint>
#include <vector>

#include "qdm/detection.hpp"

namespace qdm {

struct LossConfig {
  double lambda = 1.0;  // balance weight on the regression term
  int n_cls = 256;
  int n_reg = 4;
};

// Per cell x anchor: p* label, plus the encoded target where p* = 1.
struct TargetMap {
  int h = 0, w = 0, num_anchors = 0;
  std::vector<std::uint8_t> positive;
  std::vector<RegressionTarget> boxes;

  TargetMap() = default;
  TargetMap(int h_, int w_, int a_)
      : h(h_), w(w_), num_anchors(a_),
        positive(static_cast<std::size_t>(h_) * w_ * a_, 0),
        boxes(static_cast<std::size_t>(h_) * w_ * a_) {}
  std::size_t index(int row, int col, int a) const {
    return (static_cast<std::size_t>(row) * w + col) * num_anchors + a;
  }
};

// Each ground-truth box claims the single (cell, anchor) slot that maximizes
// IoU against the anchor placed at the cell center; ties go to the lowest
// (row, col, anchor id). Everything else stays negative.
TargetMap assign_targets(const std::vector<BBox>& gts, const AnchorSet& anchors,
                         int grid_h, int grid_w, int stride);

// L = (1/n_cls) * sum CE(sigmoid(logit), p*)
//   + lambda * (1/n_reg) * sum_i p*_i * sum_k (b_k - b*_k)^2
// with logits clamped to +-30 before the sigmoid. n_reg = 4 makes the inner
// sum a per-slot component mean.
double detection_loss(const HeadMap& pred, const TargetMap& target,
                      const LossConfig& cfg);

// Analytic partials w.r.t. every head channel, same layout as pred.grid.
// Score: (sigmoid(logit) - p*)/n_cls (zero where the clamp is active).
// Regression: 2*lambda*p**(b_k - b*_k)/n_reg.
Tensor loss_gradient(const HeadMap& pred, const TargetMap& target,
                     const LossConfig& cfg);

}  // namespace qdm
