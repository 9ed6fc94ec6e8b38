#include "qdm/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qdm {

namespace {

constexpr double kLogitClamp = 30.0;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_shapes(const HeadMap& pred, const TargetMap& target) {
  if (pred.grid.shape.h != target.h || pred.grid.shape.w != target.w ||
      pred.anchors.size() != target.num_anchors ||
      pred.grid.shape.c != 5 * target.num_anchors)
    throw std::invalid_argument("prediction and target shapes do not match");
}

}  // namespace

TargetMap assign_targets(const std::vector<BBox>& gts, const AnchorSet& anchors,
                         int grid_h, int grid_w, int stride) {
  TargetMap t(grid_h, grid_w, anchors.size());
  for (const BBox& gt : gts) {
    double best = -1.0;
    int best_row = 0, best_col = 0, best_a = 0;
    for (int row = 0; row < grid_h; ++row)
      for (int col = 0; col < grid_w; ++col) {
        const double xa = (col + 0.5) * stride;
        const double ya = (row + 0.5) * stride;
        for (int a = 0; a < anchors.size(); ++a) {
          const Anchor& an = anchors.anchors[a];
          const BBox placed{xa, ya, an.w_a, an.h_a};
          const double v = iou(gt, placed);
          // strict > keeps the first maximizer: lowest (row, col, anchor)
          if (v > best) {
            best = v;
            best_row = row;
            best_col = col;
            best_a = a;
          }
        }
      }
    const std::size_t i = t.index(best_row, best_col, best_a);
    t.positive[i] = 1;
    t.boxes[i] = encode_box(gt, anchors.anchors[best_a],
                            (best_col + 0.5) * stride, (best_row + 0.5) * stride);
  }
  return t;
}

double detection_loss(const HeadMap& pred, const TargetMap& target,
                      const LossConfig& cfg) {
  check_shapes(pred, target);
  double cls = 0.0, reg = 0.0;
  for (int row = 0; row < target.h; ++row)
    for (int col = 0; col < target.w; ++col)
      for (int a = 0; a < target.num_anchors; ++a) {
        const std::size_t i = target.index(row, col, a);
        const int base = 5 * a;
        const double logit =
            std::clamp<double>(pred.grid.at(0, row, col, base), -kLogitClamp,
                               kLogitClamp);
        const double p = sigmoid(logit);
        const double ps = target.positive[i] ? 1.0 : 0.0;
        cls -= ps * std::log(p) + (1.0 - ps) * std::log(1.0 - p);
        if (target.positive[i]) {
          const RegressionTarget& bs = target.boxes[i];
          const double d[4] = {pred.grid.at(0, row, col, base + 1) - bs.tx,
                               pred.grid.at(0, row, col, base + 2) - bs.ty,
                               pred.grid.at(0, row, col, base + 3) - bs.tw,
                               pred.grid.at(0, row, col, base + 4) - bs.th};
          for (double v : d) reg += v * v;
        }
      }
  return cls / cfg.n_cls + cfg.lambda * reg / cfg.n_reg;
}

Tensor loss_gradient(const HeadMap& pred, const TargetMap& target,
                     const LossConfig& cfg) {
  check_shapes(pred, target);
  Tensor g(1, target.h, target.w, pred.grid.shape.c);
  for (int row = 0; row < target.h; ++row)
    for (int col = 0; col < target.w; ++col)
      for (int a = 0; a < target.num_anchors; ++a) {
        const std::size_t i = target.index(row, col, a);
        const int base = 5 * a;
        const double logit = pred.grid.at(0, row, col, base);
        const double ps = target.positive[i] ? 1.0 : 0.0;
        if (std::abs(logit) < kLogitClamp)
          g.at(0, row, col, base) =
              static_cast<float>((sigmoid(logit) - ps) / cfg.n_cls);
        if (target.positive[i]) {
          const RegressionTarget& bs = target.boxes[i];
          const double bstar[4] = {bs.tx, bs.ty, bs.tw, bs.th};
          for (int k = 0; k < 4; ++k)
            g.at(0, row, col, base + 1 + k) = static_cast<float>(
                2.0 * cfg.lambda *
                (pred.grid.at(0, row, col, base + 1 + k) - bstar[k]) / cfg.n_reg);
        }
      }
  return g;
}

}  // namespace qdm
