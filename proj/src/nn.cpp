#include "qdm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qdm {

Tensor::Tensor(TensorShape s, float fill) : shape(s) {
  if (s.n < 0 || s.h < 0 || s.w < 0 || s.c < 0)
    throw std::invalid_argument("tensor: negative extent");
  data.assign(static_cast<std::size_t>(s.numel()), fill);
}

Tensor::Tensor(int n, int h, int w, int c, float fill)
    : Tensor(TensorShape{n, h, w, c}, fill) {}

QTensor::QTensor(TensorShape s, QFormat f) : shape(s), fmt(f) {
  if (s.n < 0 || s.h < 0 || s.w < 0 || s.c < 0)
    throw std::invalid_argument("tensor: negative extent");
  raw.assign(static_cast<std::size_t>(s.numel()), 0);
}

QTensor quantize_tensor(const Tensor& t, QFormat fmt, QRound mode) {
  QTensor q(t.shape, fmt);
  for (std::size_t i = 0; i < t.data.size(); ++i)
    q.raw[i] = quantize(t.data[i], fmt, mode).raw;
  return q;
}

Tensor dequantize_tensor(const QTensor& t) {
  Tensor out(t.shape);
  for (std::size_t i = 0; i < t.raw.size(); ++i)
    out.data[i] = static_cast<float>(dequantize_raw(t.raw[i], t.fmt.n));
  return out;
}

namespace {

int same_pad_total(int in, int kernel, int stride) {
  const int out = (in + stride - 1) / stride;
  return std::max((out - 1) * stride + kernel - in, 0);
}

void check_conv_args(const TensorShape& x, const TensorShape& w, int stride,
                     bool depthwise) {
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (w.n < 1 || w.h < 1) throw std::invalid_argument("conv: empty kernel");
  if (depthwise) {
    if (w.c != 1) throw std::invalid_argument("depthwise: weight cout axis must be 1");
    if (w.w != x.c)
      throw std::invalid_argument("depthwise: weight channels " + std::to_string(w.w) +
                                  " != input channels " + std::to_string(x.c));
  } else if (w.w != x.c) {
    throw std::invalid_argument("conv: weight cin " + std::to_string(w.w) +
                                " != input channels " + std::to_string(x.c));
  }
}

}  // namespace

Pad4 resolve_padding(const PadSpec& spec, int kernel, int stride, int h, int w) {
  switch (spec.mode) {
    case PadMode::explicit_pad:
      if (spec.px.top < 0 || spec.px.bottom < 0 || spec.px.left < 0 || spec.px.right < 0)
        throw std::invalid_argument("pad: negative count");
      return spec.px;
    case PadMode::full_symmetric: {
      const int p = kernel / 2;
      return {p, p, p, p};
    }
    case PadMode::same_asymmetric: {
      const int th = same_pad_total(h, kernel, stride);
      const int tw = same_pad_total(w, kernel, stride);
      return {th / 2, th - th / 2, tw / 2, tw - tw / 2};
    }
  }
  throw std::invalid_argument("pad: bad mode");
}

Tensor pad2d(const Tensor& x, const PadSpec& spec) {
  const Pad4 p = resolve_padding(spec, spec.kernel, spec.stride, x.shape.h, x.shape.w);
  if (!p.any()) return x;
  Tensor out(x.shape.n, x.shape.h + p.top + p.bottom, x.shape.w + p.left + p.right,
             x.shape.c);
  for (int n = 0; n < x.shape.n; ++n)
    for (int y = 0; y < x.shape.h; ++y) {
      const float* src = &x.data[x.index(n, y, 0, 0)];
      float* dst = &out.data[out.index(n, y + p.top, p.left, 0)];
      std::copy(src, src + static_cast<std::size_t>(x.shape.w) * x.shape.c, dst);
    }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, const PadSpec& pad,
              std::span<const float> bias) {
  check_conv_args(x.shape, w.shape, stride, false);
  const int kh = w.shape.n, kw = w.shape.h, cin = w.shape.w, cout = w.shape.c;
  if (!bias.empty() && static_cast<int>(bias.size()) != cout)
    throw std::invalid_argument("conv: bias size != cout");

  PadSpec eff = pad;
  eff.kernel = std::max(kh, kw);
  eff.stride = stride;
  const Pad4 p = resolve_padding(eff, eff.kernel, stride, x.shape.h, x.shape.w);
  const Tensor xp = p.any() ? pad2d(x, PadSpec::offsets(p.top, p.bottom, p.left, p.right)) : x;

  if (xp.shape.h < kh || xp.shape.w < kw)
    throw std::invalid_argument("conv: kernel larger than padded input");
  const int oh = (xp.shape.h - kh) / stride + 1;
  const int ow = (xp.shape.w - kw) / stride + 1;

  Tensor out(x.shape.n, oh, ow, cout);
  std::vector<double> acc(static_cast<std::size_t>(cout));
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        if (bias.empty())
          std::fill(acc.begin(), acc.end(), 0.0);
        else
          for (int oc = 0; oc < cout; ++oc) acc[oc] = bias[oc];
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const float* xrow = &xp.data[xp.index(n, oy * stride + ky, ox * stride + kx, 0)];
            const float* wrow = &w.data[w.index(ky, kx, 0, 0)];
            for (int ic = 0; ic < cin; ++ic) {
              const double xv = xrow[ic];
              const float* wr = wrow + static_cast<std::size_t>(ic) * cout;
              for (int oc = 0; oc < cout; ++oc) acc[oc] += xv * wr[oc];
            }
          }
        float* orow = &out.data[out.index(n, oy, ox, 0)];
        for (int oc = 0; oc < cout; ++oc) orow[oc] = static_cast<float>(acc[oc]);
      }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride,
                        const PadSpec& pad, std::span<const float> bias) {
  check_conv_args(x.shape, w.shape, stride, true);
  const int kh = w.shape.n, kw = w.shape.h, c = x.shape.c;
  if (!bias.empty() && static_cast<int>(bias.size()) != c)
    throw std::invalid_argument("depthwise: bias size != channels");

  PadSpec eff = pad;
  eff.kernel = std::max(kh, kw);
  eff.stride = stride;
  const Pad4 p = resolve_padding(eff, eff.kernel, stride, x.shape.h, x.shape.w);
  const Tensor xp = p.any() ? pad2d(x, PadSpec::offsets(p.top, p.bottom, p.left, p.right)) : x;

  if (xp.shape.h < kh || xp.shape.w < kw)
    throw std::invalid_argument("depthwise: kernel larger than padded input");
  const int oh = (xp.shape.h - kh) / stride + 1;
  const int ow = (xp.shape.w - kw) / stride + 1;

  Tensor out(x.shape.n, oh, ow, c);
  std::vector<double> acc(static_cast<std::size_t>(c));
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        if (bias.empty())
          std::fill(acc.begin(), acc.end(), 0.0);
        else
          for (int ch = 0; ch < c; ++ch) acc[ch] = bias[ch];
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const float* xrow = &xp.data[xp.index(n, oy * stride + ky, ox * stride + kx, 0)];
            const float* wrow = &w.data[w.index(ky, kx, 0, 0)];
            for (int ch = 0; ch < c; ++ch) acc[ch] += static_cast<double>(xrow[ch]) * wrow[ch];
          }
        float* orow = &out.data[out.index(n, oy, ox, 0)];
        for (int ch = 0; ch < c; ++ch) orow[ch] = static_cast<float>(acc[ch]);
      }
  return out;
}

Tensor relu6(const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data) v = std::min(std::max(v, 0.0f), 6.0f);
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!(a.shape == b.shape)) throw std::invalid_argument("add: shape mismatch");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

namespace {

// Shared sampler: out dimension `od` maps index i to source coordinate
// (i + 0.5) * (in / od) - 0.5, clamped to the valid range.
Tensor bilinear_sample(const Tensor& x, int oh, int ow) {
  const int ih = x.shape.h, iw = x.shape.w, c = x.shape.c;
  const double sy = static_cast<double>(ih) / oh;
  const double sx = static_cast<double>(iw) / ow;
  Tensor out(x.shape.n, oh, ow, c);
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < oh; ++oy) {
      double fy = (oy + 0.5) * sy - 0.5;
      fy = std::min(std::max(fy, 0.0), static_cast<double>(ih - 1));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, ih - 1);
      const double wy = fy - y0;
      for (int ox = 0; ox < ow; ++ox) {
        double fx = (ox + 0.5) * sx - 0.5;
        fx = std::min(std::max(fx, 0.0), static_cast<double>(iw - 1));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, iw - 1);
        const double wx = fx - x0;
        const float* p00 = &x.data[x.index(n, y0, x0, 0)];
        const float* p01 = &x.data[x.index(n, y0, x1, 0)];
        const float* p10 = &x.data[x.index(n, y1, x0, 0)];
        const float* p11 = &x.data[x.index(n, y1, x1, 0)];
        float* o = &out.data[out.index(n, oy, ox, 0)];
        for (int ch = 0; ch < c; ++ch) {
          const double top = p00[ch] + (p01[ch] - static_cast<double>(p00[ch])) * wx;
          const double bot = p10[ch] + (p11[ch] - static_cast<double>(p10[ch])) * wx;
          o[ch] = static_cast<float>(top + (bot - top) * wy);
        }
      }
    }
  return out;
}

}  // namespace

Tensor upsample2x_bilinear(const Tensor& x) {
  if (x.shape.h < 1 || x.shape.w < 1)
    throw std::invalid_argument("upsample2x: empty spatial extent");
  return bilinear_sample(x, 2 * x.shape.h, 2 * x.shape.w);
}

Tensor resize_bilinear(const Tensor& x, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor))
    throw std::invalid_argument("resize: factor must be positive");
  if (x.shape.h < 1 || x.shape.w < 1)
    throw std::invalid_argument("resize: empty spatial extent");
  const int oh = std::max<int>(1, static_cast<int>(std::llround(x.shape.h * factor)));
  const int ow = std::max<int>(1, static_cast<int>(std::llround(x.shape.w * factor)));
  return bilinear_sample(x, oh, ow);
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
    throw std::invalid_argument("concat: spatial shape mismatch");
  Tensor out(a.shape.n, a.shape.h, a.shape.w, a.shape.c + b.shape.c);
  for (int n = 0; n < a.shape.n; ++n)
    for (int y = 0; y < a.shape.h; ++y)
      for (int x = 0; x < a.shape.w; ++x) {
        float* dst = &out.data[out.index(n, y, x, 0)];
        if (a.shape.c) {
          const float* pa = &a.data[a.index(n, y, x, 0)];
          std::copy(pa, pa + a.shape.c, dst);
        }
        if (b.shape.c) {
          const float* pb = &b.data[b.index(n, y, x, 0)];
          std::copy(pb, pb + b.shape.c, dst + a.shape.c);
        }
      }
  return out;
}

std::int64_t conv2d_mac_count(int kh, int kw, int cin, int cout, int out_h, int out_w) {
  return std::int64_t(kh) * kw * cin * cout * out_h * out_w;
}

std::int64_t depthwise_mac_count(int kh, int kw, int c, int out_h, int out_w) {
  return std::int64_t(kh) * kw * c * out_h * out_w;
}

}  // namespace qdm
