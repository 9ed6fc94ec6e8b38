#include "qdm/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "qdm/nn.hpp"

namespace qdm {

namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

AnchorSet default_anchors() {
  AnchorSet s;
  const int count = 25;
  const double lo = 16.0, hi = 360.0;
  for (int i = 0; i < count; ++i) {
    const double w = lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1));
    s.anchors.push_back({w, w, i});
  }
  return s;
}

AnchorSet load_anchors(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open anchor file: " + path);
  AnchorSet s;
  double w = 0, h = 0;
  int id = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!(ls >> w >> h)) fail("malformed anchor line in " + path + ": " + line);
    if (w <= 0 || h <= 0) fail("non-positive anchor extent in " + path);
    s.anchors.push_back({w, h, id++});
  }
  if (s.anchors.empty()) fail("anchor file has no anchors: " + path);
  return s;
}

void save_anchors(const AnchorSet& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write anchor file: " + path);
  char buf[80];
  for (const Anchor& a : s.anchors) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", a.w_a, a.h_a);
    out << buf;
  }
  if (!out) fail("write failed: " + path);
}

RegressionTarget encode_box(const BBox& b, const Anchor& a, double xa, double ya) {
  if (b.w <= 0 || b.h <= 0) throw std::invalid_argument("non-positive box extent");
  if (a.w_a <= 0 || a.h_a <= 0) throw std::invalid_argument("non-positive anchor extent");
  return {(b.cx - xa) / a.w_a, (b.cy - ya) / a.h_a, std::log(b.w / a.w_a),
          std::log(b.h / a.h_a)};
}

BBox decode_box(const RegressionTarget& t, const Anchor& a, double xa, double ya) {
  // exp clamp keeps absurd regressions finite instead of inf
  const double cw = std::min(t.tw, 80.0), ch = std::min(t.th, 80.0);
  return {xa + t.tx * a.w_a, ya + t.ty * a.h_a, a.w_a * std::exp(cw),
          a.h_a * std::exp(ch)};
}

double iou(const BBox& a, const BBox& b) {
  const double al = a.cx - a.w / 2, ar = a.cx + a.w / 2;
  const double at = a.cy - a.h / 2, ab = a.cy + a.h / 2;
  const double bl = b.cx - b.w / 2, br = b.cx + b.w / 2;
  const double bt = b.cy - b.h / 2, bb = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ar, br) - std::max(al, bl));
  const double ih = std::max(0.0, std::min(ab, bb) - std::max(at, bt));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<Detection> extract_detections(const HeadMap& m, double score_threshold) {
  const int na = m.anchors.size();
  if (m.grid.shape.c != 5 * na)
    throw std::invalid_argument("head map channels do not match 5 * anchor count");
  std::vector<Detection> out;
  for (int row = 0; row < m.grid.shape.h; ++row)
    for (int col = 0; col < m.grid.shape.w; ++col) {
      const double xa = (col + 0.5) * m.stride;
      const double ya = (row + 0.5) * m.stride;
      for (int a = 0; a < na; ++a) {
        const int base = 5 * a;
        const double score = sigmoid(m.grid.at(0, row, col, base));
        if (score < score_threshold) continue;
        const RegressionTarget t{m.grid.at(0, row, col, base + 1),
                                 m.grid.at(0, row, col, base + 2),
                                 m.grid.at(0, row, col, base + 3),
                                 m.grid.at(0, row, col, base + 4)};
        out.push_back({decode_box(t, m.anchors.anchors[a], xa, ya), score, 1.0});
      }
    }
  return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    const Detection& a = dets[i];
    const Detection& b = dets[j];
    if (a.score != b.score) return a.score > b.score;
    if (a.box.cy != b.box.cy) return a.box.cy < b.box.cy;
    return a.box.cx < b.box.cx;
  });
  std::vector<Detection> kept;
  std::vector<char> dead(dets.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (dead[i]) continue;
    const Detection& top = dets[order[i]];
    kept.push_back(top);
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (!dead[j] && iou(top.box, dets[order[j]].box) >= iou_threshold) dead[j] = 1;
  }
  return kept;
}

std::vector<Detection> multi_scale_detect(const ScaleForward& forward,
                                          const Tensor& image,
                                          const std::vector<double>& scales,
                                          double score_threshold,
                                          double iou_threshold) {
  std::vector<Detection> pool;
  for (double s : scales) {
    if (s <= 0) throw std::invalid_argument("scale factors must be positive");
    const Tensor resized = (s == 1.0) ? image : resize_bilinear(image, s);
    const HeadMap m = forward(resized);
    for (Detection d : extract_detections(m, score_threshold)) {
      d.box.cx /= s;
      d.box.cy /= s;
      d.box.w /= s;
      d.box.h /= s;
      d.scale_of_origin = s;
      pool.push_back(d);
    }
  }
  return nms(pool, iou_threshold);
}

void write_detections(const std::vector<ImageDetections>& all, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write detection file: " + path);
  // %.6f of a double spans up to 317 bytes, so five fields need real room;
  // a short buffer would silently truncate wild boxes from untrained models
  char buf[1664];
  for (const ImageDetections& rec : all) {
    out << rec.image_id << '\n' << rec.dets.size() << '\n';
    for (const Detection& d : rec.dets) {
      std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f\n",
                    d.box.cx - d.box.w / 2, d.box.cy - d.box.h / 2, d.box.w,
                    d.box.h, d.score);
      out << buf;
    }
  }
  if (!out) fail("write failed: " + path);
}

std::vector<ImageDetections> read_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open detection file: " + path);
  std::vector<ImageDetections> all;
  std::string line;
  int line_no = 0;
  auto next_line = [&](std::string& dst) {
    if (!std::getline(in, dst)) return false;
    ++line_no;
    return true;
  };
  while (next_line(line)) {
    if (line.empty()) continue;
    ImageDetections rec;
    rec.image_id = line;
    std::string count_line;
    if (!next_line(count_line))
      fail(path + ": missing count after image id '" + rec.image_id + "'");
    long count = 0;
    try {
      count = std::stol(count_line);
    } catch (const std::exception&) {
      fail(path + ":" + std::to_string(line_no) + ": bad detection count");
    }
    if (count < 0) fail(path + ":" + std::to_string(line_no) + ": negative count");
    for (long i = 0; i < count; ++i) {
      if (!next_line(line))
        fail(path + ": truncated detections for image '" + rec.image_id + "'");
      std::istringstream ls(line);
      double left, top, w, h, score;
      if (!(ls >> left >> top >> w >> h >> score))
        fail(path + ":" + std::to_string(line_no) + ": malformed detection line");
      rec.dets.push_back({{left + w / 2, top + h / 2, w, h}, score, 1.0});
    }
    all.push_back(std::move(rec));
  }
  return all;
}

}  // namespace qdm
