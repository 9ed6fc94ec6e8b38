#include "qdm/engine.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

#include "qdm/nn.hpp"
#include "qdm/nn_fixed.hpp"

namespace qdm {

namespace {

constexpr double kBnEpsilon = 1e-3;

// Folded kernel and per-channel bias for a conv/depthwise/head layer.
struct FoldedWeights {
  Tensor w{0, 0, 0, 0};
  std::vector<float> bias;
};

FoldedWeights fold_layer(const ModelGraph& g, const Layer& L) {
  FoldedWeights f;
  const Blob& wb = g.blobs[L.wblob];
  f.w = Tensor(wb.d0, wb.d1, wb.d2, wb.d3);
  f.w.data = blob_as_float(g, L.wblob);
  if (L.bn) {
    const std::vector<float> bn = blob_as_float(g, L.bnblob);
    const int c = L.out_ch;
    f.bias.resize(c);
    std::vector<double> scale(c);
    for (int i = 0; i < c; ++i) {
      const double gamma = bn[i], beta = bn[c + i];
      const double mean = bn[2 * c + i], var = bn[3 * c + i];
      scale[i] = gamma / std::sqrt(var + kBnEpsilon);
      f.bias[i] = static_cast<float>(beta - mean * scale[i]);
    }
    if (L.kind == LayerKind::depthwise) {
      // kernel axes (kh, kw, c, 1): the norm channel is axis 2
      for (int ky = 0; ky < wb.d0; ++ky)
        for (int kx = 0; kx < wb.d1; ++kx)
          for (int ch = 0; ch < c; ++ch)
            f.w.at(ky, kx, ch, 0) = static_cast<float>(
                f.w.at(ky, kx, ch, 0) * scale[ch]);
    } else {
      for (int ky = 0; ky < wb.d0; ++ky)
        for (int kx = 0; kx < wb.d1; ++kx)
          for (int ic = 0; ic < wb.d2; ++ic)
            for (int oc = 0; oc < c; ++oc)
              f.w.at(ky, kx, ic, oc) = static_cast<float>(
                  f.w.at(ky, kx, ic, oc) * scale[oc]);
    }
  } else if (L.bias) {
    f.bias = blob_as_float(g, L.biasblob);
  }
  return f;
}

// Concat joins a stride-16 branch with an upsampled stride-32 branch; the
// two spatial grids only meet when both input extents are multiples of 32.
void check_concat_geometry(const ModelGraph& g, int h, int w) {
  if (g.cfg.out != OutStrategy::C) return;
  if (h % 32 == 0 && w % 32 == 0) return;
  throw std::invalid_argument(
      "input " + std::to_string(h) + "x" + std::to_string(w) +
      " does not align the concat branches; both extents must be multiples "
      "of 32");
}

// Index of the last layer consuming each layer's output, for freeing early.
std::vector<int> last_uses(const ModelGraph& g) {
  std::vector<int> last(g.layers.size(), -1);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].in0 >= 0) last[g.layers[i].in0] = static_cast<int>(i);
    if (g.layers[i].in1 >= 0) last[g.layers[i].in1] = static_cast<int>(i);
  }
  last[g.head_layer] = static_cast<int>(g.layers.size());
  return last;
}

}  // namespace

Tensor forward_float(const ModelGraph& g, const Tensor& input,
                     const LayerRecorder& rec) {
  validate(g);
  if (input.shape.c != g.layers.front().in_ch)
    throw std::invalid_argument("input channel count does not match the model");
  check_concat_geometry(g, input.shape.h, input.shape.w);
  const std::vector<int> last = last_uses(g);
  std::vector<std::optional<Tensor>> outs(g.layers.size());
  auto in_of = [&](int idx) -> const Tensor& {
    return idx < 0 ? input : *outs[idx];
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& L = g.layers[i];
    Tensor y(0, 0, 0, 0);
    switch (L.kind) {
      case LayerKind::conv:
      case LayerKind::head:
      case LayerKind::depthwise: {
        const FoldedWeights f = fold_layer(g, L);
        const std::span<const float> bias(f.bias);
        y = L.kind == LayerKind::depthwise
                ? depthwise_conv2d(in_of(L.in0), f.w, L.stride,
                                   PadSpec::same(), bias)
                : conv2d(in_of(L.in0), f.w, L.stride, PadSpec::same(), bias);
        if (L.relu6) y = relu6(y);
        break;
      }
      case LayerKind::add:
        y = add(in_of(L.in0), in_of(L.in1));
        break;
      case LayerKind::upsample2x:
        y = upsample2x_bilinear(in_of(L.in0));
        break;
      case LayerKind::concat:
        y = concat_channels(in_of(L.in0), in_of(L.in1));
        break;
    }
    if (rec) rec(static_cast<int>(i), L, y);
    outs[i] = std::move(y);
    for (std::size_t k = 0; k <= i; ++k)
      if (outs[k] && last[k] <= static_cast<int>(i) &&
          k != static_cast<std::size_t>(g.head_layer))
        outs[k].reset();
  }
  return *outs[g.head_layer];
}

QTensor forward_fixed(const ModelGraph& g, const QTensor& input) {
  validate(g);
  if (g.storage.kind != StorageFormat::Kind::qformat)
    throw std::invalid_argument("fixed-point forward needs a quantized model");
  const QFormat act = g.storage.activation_fmt;
  const QFormat wfmt = g.storage.weight_fmt;
  if (!(input.fmt == act))
    throw std::invalid_argument("input format must match the activation format");
  check_concat_geometry(g, input.shape.h, input.shape.w);
  const std::vector<int> last = last_uses(g);
  std::vector<std::optional<QTensor>> outs(g.layers.size());
  auto in_of = [&](int idx) -> const QTensor& {
    return idx < 0 ? input : *outs[idx];
  };
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const Layer& L = g.layers[i];
    QTensor y(TensorShape{0, 0, 0, 0}, act);
    switch (L.kind) {
      case LayerKind::conv:
      case LayerKind::head:
      case LayerKind::depthwise: {
        const FoldedWeights f = fold_layer(g, L);
        const QTensor wq = quantize_tensor(f.w, wfmt);
        const std::span<const float> bias(f.bias);
        y = L.kind == LayerKind::depthwise
                ? depthwise_conv2d_fixed(in_of(L.in0), wq, L.stride,
                                         PadSpec::same(), act, bias)
                : conv2d_fixed(in_of(L.in0), wq, L.stride, PadSpec::same(),
                               act, bias);
        if (L.relu6) y = relu6_fixed(y);
        break;
      }
      case LayerKind::add:
        y = add_fixed(in_of(L.in0), in_of(L.in1));
        break;
      case LayerKind::upsample2x:
        y = upsample2x_fixed(in_of(L.in0));
        break;
      case LayerKind::concat:
        y = concat_channels_fixed(in_of(L.in0), in_of(L.in1));
        break;
    }
    outs[i] = std::move(y);
    for (std::size_t k = 0; k <= i; ++k)
      if (outs[k] && last[k] <= static_cast<int>(i) &&
          k != static_cast<std::size_t>(g.head_layer))
        outs[k].reset();
  }
  return *outs[g.head_layer];
}

HeadMap run_model(const ModelGraph& g, const Tensor& image) {
  HeadMap m;
  m.stride = g.head_stride;
  m.anchors = g.cfg.anchors;
  if (g.storage.kind == StorageFormat::Kind::qformat) {
    const QTensor qin = quantize_tensor(image, g.storage.activation_fmt);
    m.grid = dequantize_tensor(forward_fixed(g, qin));
  } else {
    m.grid = forward_float(g, image);
  }
  return m;
}

std::vector<Detection> detect_image(const ModelGraph& g, const Tensor& image,
                                    const std::vector<double>& scales,
                                    double score_threshold,
                                    double iou_threshold) {
  return multi_scale_detect(
      [&g](const Tensor& resized) { return run_model(g, resized); }, image,
      scales, score_threshold, iou_threshold);
}

}  // namespace qdm
