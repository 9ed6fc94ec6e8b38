#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qdm/detection.hpp"
#include "qdm/tensor.hpp"

namespace qdm {

struct FddbEllipse {
  double major_radius = 0, minor_radius = 0;
  double angle = 0;  // radians; parsed, unused by the box transform
  double cx = 0, cy = 0;
};

struct EllipseBoxCoeffs {
  double alpha = 1.3;  // box side per ellipse width
  double beta = 0.26;  // downward center shift per ellipse width
};

// Square box from a face ellipse. The face width is the full minor axis
// (2 * minor_radius); side = alpha * width, center drops by beta * width.
BBox ellipse_to_box(const FddbEllipse& e, const EllipseBoxCoeffs& c = {});

struct FddbRecord {
  std::string image_id;
  std::vector<FddbEllipse> faces;
};

// Annotation format: image id line, face count line, then one
// "major minor angle cx cy 1" line per face.
std::vector<FddbRecord> parse_fddb(const std::string& path);
void write_fddb(const std::vector<FddbRecord>& records, const std::string& path);

// 8-bit pixels, row-major, interleaved channels (1 = gray, 3 = rgb).
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Binary portable pixmaps only: P5 gray, P6 color, maxval 255.
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

// 1 x H x W x C tensor scaled to [0, 1] by /255.
Tensor image_to_tensor(const Image& img);

// Same half-pixel sampling as the tensor resizer, rounded back to bytes.
Image resize_bilinear(const Image& img, double factor);

}  // namespace qdm
