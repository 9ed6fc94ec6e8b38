#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qdm/fixedpoint.hpp"

namespace qdm {

// Dense NHWC tensor. Weights reuse the same container with the axes read as
// (kh, kw, cin, cout).
struct TensorShape {
  int n = 0, h = 0, w = 0, c = 0;

  std::int64_t numel() const {
    return std::int64_t(n) * h * w * c;
  }
  bool operator==(const TensorShape&) const = default;
};

struct Tensor {
  TensorShape shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(TensorShape s, float fill = 0.0f);
  Tensor(int n, int h, int w, int c, float fill = 0.0f);

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape.h + y) * shape.w + x) * shape.c + ch;
  }
  float& at(int n, int y, int x, int ch) { return data[index(n, y, x, ch)]; }
  float at(int n, int y, int x, int ch) const { return data[index(n, y, x, ch)]; }
};

// Same layout with raw fixed-point codes in a shared format.
struct QTensor {
  TensorShape shape;
  QFormat fmt;
  std::vector<std::int32_t> raw;

  QTensor() = default;
  QTensor(TensorShape s, QFormat f);

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape.h + y) * shape.w + x) * shape.c + ch;
  }
  std::int32_t& at(int n, int y, int x, int ch) { return raw[index(n, y, x, ch)]; }
  std::int32_t at(int n, int y, int x, int ch) const { return raw[index(n, y, x, ch)]; }
};

QTensor quantize_tensor(const Tensor& t, QFormat fmt,
                        QRound mode = QRound::nearest_even);
Tensor dequantize_tensor(const QTensor& t);

}  // namespace qdm
