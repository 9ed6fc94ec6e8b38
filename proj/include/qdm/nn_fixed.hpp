#pragma once

#include <span>

#include "qdm/nn.hpp"

namespace qdm {

// Integer counterparts of the float kernels. Products accumulate exactly at
// n_x + n_w fractional bits in a 64-bit accumulator (overflow throws, never
// wraps); a single round-half-even rescale with saturation lands on out_fmt.
// Bias values are folded in at the accumulator scale.

QTensor pad2d_fixed(const QTensor& x, const PadSpec& spec);

QTensor conv2d_fixed(const QTensor& x, const QTensor& w, int stride,
                     const PadSpec& pad, QFormat out_fmt,
                     std::span<const float> bias = {});

QTensor depthwise_conv2d_fixed(const QTensor& x, const QTensor& w, int stride,
                               const PadSpec& pad, QFormat out_fmt,
                               std::span<const float> bias = {});

// Exact on raw codes: clamp to [0, 6] in the tensor's own format.
QTensor relu6_fixed(const QTensor& x);

// Element-wise saturating add; both operands must share the format.
QTensor add_fixed(const QTensor& a, const QTensor& b);

// Factor-2 bilinear with half-pixel centers. All sample weights are
// sixteenths, so this is exact integer arithmetic with one rounded shift.
QTensor upsample2x_fixed(const QTensor& x);

QTensor concat_channels_fixed(const QTensor& a, const QTensor& b);

}  // namespace qdm
