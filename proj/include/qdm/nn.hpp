#pragma once

#include <cstdint>
#include <span>

#include "qdm/tensor.hpp"

namespace qdm {

struct Pad4 {
  int top = 0, bottom = 0, left = 0, right = 0;
  bool any() const { return top | bottom | left | right; }
  bool operator==(const Pad4&) const = default;
};

enum class PadMode {
  same_asymmetric,  // output ceil(in/stride); odd totals pad bottom/right
  full_symmetric,   // kernel/2 on every side
  explicit_pad,     // caller-provided counts
};

struct PadSpec {
  PadMode mode = PadMode::same_asymmetric;
  Pad4 px;         // explicit_pad
  int kernel = 1;  // computed modes (pad2d); conv ops use their own kernel
  int stride = 1;

  static PadSpec same(int kernel = 1, int stride = 1) {
    return {PadMode::same_asymmetric, {}, kernel, stride};
  }
  static PadSpec full(int kernel) {
    return {PadMode::full_symmetric, {}, kernel, 1};
  }
  static PadSpec offsets(int top, int bottom, int left, int right) {
    return {PadMode::explicit_pad, {top, bottom, left, right}, 1, 1};
  }
  static PadSpec none() { return offsets(0, 0, 0, 0); }
};

// Explicit pixel counts for an h x w input under (kernel, stride).
Pad4 resolve_padding(const PadSpec& spec, int kernel, int stride, int h, int w);

Tensor pad2d(const Tensor& x, const PadSpec& spec);

// w axes: (kh, kw, cin, cout). bias, when present, has cout entries.
// Accumulation runs in double with a fixed row-major term order.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride, const PadSpec& pad,
              std::span<const float> bias = {});

// w axes: (kh, kw, c, 1); channels never mix.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride,
                        const PadSpec& pad, std::span<const float> bias = {});

Tensor relu6(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);

// Factor-2 bilinear upsampling with half-pixel centers and edge clamping.
Tensor upsample2x_bilinear(const Tensor& x);

// General bilinear resize by a positive factor, same sampling convention.
// factor == 2 reproduces upsample2x_bilinear bit for bit; factor == 1 copies.
Tensor resize_bilinear(const Tensor& x, double factor);

// Channel concatenation, a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Multiply counts for one layer application.
std::int64_t conv2d_mac_count(int kh, int kw, int cin, int cout, int out_h, int out_w);
std::int64_t depthwise_mac_count(int kh, int kw, int c, int out_h, int out_w);

}  // namespace qdm
