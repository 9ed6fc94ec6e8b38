#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qdm/tensor.hpp"

namespace qdm {

// Boxes live in center form (pixel units of whatever frame produced them).
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct Anchor {
  double w_a = 0, h_a = 0;
  int id = 0;
};

struct AnchorSet {
  std::vector<Anchor> anchors;
  int size() const { return static_cast<int>(anchors.size()); }
};

// 25 square anchors, widths log-uniform over [16, 360] px.
AnchorSet default_anchors();
AnchorSet load_anchors(const std::string& path);
void save_anchors(const AnchorSet& s, const std::string& path);

struct RegressionTarget {
  double tx = 0, ty = 0, tw = 0, th = 0;
};

struct Detection {
  BBox box;
  double score = 0;            // in [0, 1]
  double scale_of_origin = 1;  // pyramid scale that produced it
};

// Head output: grid is 1 x H x W x 5A. Per anchor a, channel 5a holds the
// pre-sigmoid objectness logit and channels 5a+1..5a+4 the linear t vector.
struct HeadMap {
  Tensor grid;
  int stride = 16;
  AnchorSet anchors;
};

// t = ((cx-xa)/w_a, (cy-ya)/h_a, log(w/w_a), log(h/h_a)); exact inverses.
RegressionTarget encode_box(const BBox& b, const Anchor& a, double xa, double ya);
BBox decode_box(const RegressionTarget& t, const Anchor& a, double xa, double ya);

double iou(const BBox& a, const BBox& b);

// One detection per cell x anchor whose sigmoid(logit) clears the threshold.
// Cell (row, col) is centered at ((col+0.5)*stride, (row+0.5)*stride).
std::vector<Detection> extract_detections(const HeadMap& m, double score_threshold);

// Greedy suppression at IoU >= threshold. Candidates rank by score descending,
// then lower cy, lower cx, then insertion order; output keeps that rank order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

// Runs `forward` on the image resized by each factor, maps boxes back to the
// original frame by dividing by the factor, pools everything, one final NMS.
using ScaleForward = std::function<HeadMap(const Tensor& resized_image)>;
std::vector<Detection> multi_scale_detect(const ScaleForward& forward,
                                          const Tensor& image,
                                          const std::vector<double>& scales,
                                          double score_threshold,
                                          double iou_threshold);

// Detection files: image id line, count line, then per box
// "left top width height score" in corner form.
struct ImageDetections {
  std::string image_id;
  std::vector<Detection> dets;
};

void write_detections(const std::vector<ImageDetections>& all, const std::string& path);
std::vector<ImageDetections> read_detections(const std::string& path);

}  // namespace qdm
