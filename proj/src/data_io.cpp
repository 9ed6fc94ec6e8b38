#include "qdm/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qdm/nn.hpp"

namespace qdm {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

}  // namespace

BBox ellipse_to_box(const FddbEllipse& e, const EllipseBoxCoeffs& c) {
  if (e.minor_radius <= 0 || e.major_radius <= 0)
    throw std::invalid_argument("non-positive ellipse radius");
  const double w_e = 2.0 * e.minor_radius;
  const double side = c.alpha * w_e;
  return {e.cx, e.cy + c.beta * w_e, side, side};
}

std::vector<FddbRecord> parse_fddb(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open annotation file: " + path);
  std::vector<FddbRecord> records;
  std::string line;
  int line_no = 0;
  auto next_line = [&](std::string& dst) {
    while (std::getline(in, dst)) {
      ++line_no;
      if (!dst.empty() && dst.back() == '\r') dst.pop_back();
      if (!dst.empty()) return true;
    }
    return false;
  };
  while (next_line(line)) {
    FddbRecord rec;
    rec.image_id = line;
    std::string count_line;
    if (!next_line(count_line))
      fail(path + ": missing face count for image '" + rec.image_id + "'");
    long count = 0;
    try {
      std::size_t used = 0;
      count = std::stol(count_line, &used);
      if (used != count_line.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      fail(path + ":" + std::to_string(line_no) + ": bad face count for image '" +
           rec.image_id + "'");
    }
    if (count < 0)
      fail(path + ":" + std::to_string(line_no) + ": negative face count");
    for (long i = 0; i < count; ++i) {
      if (!next_line(line))
        fail(path + ": annotation count mismatch for image '" + rec.image_id +
             "' (expected " + std::to_string(count) + " faces, file ended after " +
             std::to_string(i) + ")");
      std::istringstream ls(line);
      FddbEllipse e;
      if (!(ls >> e.major_radius >> e.minor_radius >> e.angle >> e.cx >> e.cy))
        fail(path + ":" + std::to_string(line_no) +
             ": malformed ellipse line for image '" + rec.image_id + "'");
      rec.faces.push_back(e);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_fddb(const std::vector<FddbRecord>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("cannot write annotation file: " + path);
  char buf[200];
  for (const FddbRecord& rec : records) {
    out << rec.image_id << '\n' << rec.faces.size() << '\n';
    for (const FddbEllipse& e : rec.faces) {
      std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f 1\n",
                    e.major_radius, e.minor_radius, e.angle, e.cx, e.cy);
      out << buf;
    }
  }
  if (!out) fail("write failed: " + path);
}

namespace {

// Reads one PNM header token, skipping whitespace and # comments.
std::string pnm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) fail(path + ": truncated header");
  return tok;
}

int pnm_int(std::istream& in, const std::string& path) {
  const std::string tok = pnm_token(in, path);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    fail(path + ": bad header field '" + tok + "'");
  }
}

}  // namespace

Image load_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open image: " + path);
  const std::string magic = pnm_token(in, path);
  Image img;
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    fail(path + ": unsupported image magic '" + magic + "' (need P5 or P6)");
  img.width = pnm_int(in, path);
  img.height = pnm_int(in, path);
  const int maxval = pnm_int(in, path);
  if (img.width <= 0 || img.height <= 0)
    fail(path + ": bad image dimensions");
  if (maxval != 255) fail(path + ": unsupported maxval (need 255)");
  // header ends with exactly one whitespace byte, already consumed by token read
  const std::size_t bytes =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.pixels.resize(bytes);
  in.read(reinterpret_cast<char*>(img.pixels.data()),
          static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    fail(path + ": truncated pixel data");
  return img;
}

void save_image(const Image& img, const std::string& path) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("image must have 1 or 3 channels");
  const std::size_t bytes =
      static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.pixels.size() != bytes)
    throw std::invalid_argument("pixel buffer does not match dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write image: " + path);
  out << (img.channels == 1 ? "P5" : "P6") << '\n'
      << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(bytes));
  if (!out) fail("write failed: " + path);
}

Tensor image_to_tensor(const Image& img) {
  Tensor t(1, img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    t.data[i] = static_cast<float>(img.pixels[i]) / 255.0f;
  return t;
}

Image resize_bilinear(const Image& img, double factor) {
  const Tensor resized = resize_bilinear(image_to_tensor(img), factor);
  Image out;
  out.width = resized.shape.w;
  out.height = resized.shape.h;
  out.channels = resized.shape.c;
  out.pixels.resize(resized.data.size());
  for (std::size_t i = 0; i < resized.data.size(); ++i) {
    const double v = std::nearbyint(static_cast<double>(resized.data[i]) * 255.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
  }
  return out;
}

}  // namespace qdm
