#include "qdm/nn_fixed.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace qdm {

namespace {

std::int64_t bias_at_acc_scale(float bias, int frac_bits) {
  const double scaled = std::ldexp(static_cast<double>(bias), frac_bits);
  if (std::abs(scaled) >= 0x1p62) throw accumulator_overflow();
  return static_cast<std::int64_t>(std::nearbyint(scaled));
}

}  // namespace

QTensor pad2d_fixed(const QTensor& x, const PadSpec& spec) {
  const Pad4 p = resolve_padding(spec, spec.kernel, spec.stride, x.shape.h, x.shape.w);
  if (!p.any()) return x;
  QTensor out(TensorShape{x.shape.n, x.shape.h + p.top + p.bottom,
                          x.shape.w + p.left + p.right, x.shape.c},
              x.fmt);
  for (int n = 0; n < x.shape.n; ++n)
    for (int y = 0; y < x.shape.h; ++y) {
      const std::int32_t* src = &x.raw[x.index(n, y, 0, 0)];
      std::int32_t* dst = &out.raw[out.index(n, y + p.top, p.left, 0)];
      std::copy(src, src + static_cast<std::size_t>(x.shape.w) * x.shape.c, dst);
    }
  return out;
}

namespace {

struct ConvGeom {
  QTensor padded;
  int oh = 0, ow = 0;
};

ConvGeom prepare_fixed(const QTensor& x, int kh, int kw, int stride,
                       const PadSpec& pad, bool depthwise, const TensorShape& w) {
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (depthwise) {
    if (w.c != 1) throw std::invalid_argument("depthwise: weight cout axis must be 1");
    if (w.w != x.shape.c) throw std::invalid_argument("depthwise: channel mismatch");
  } else if (w.w != x.shape.c) {
    throw std::invalid_argument("conv: weight cin != input channels");
  }
  PadSpec eff = pad;
  eff.kernel = std::max(kh, kw);
  eff.stride = stride;
  ConvGeom g{pad2d_fixed(x, eff), 0, 0};
  if (g.padded.shape.h < kh || g.padded.shape.w < kw)
    throw std::invalid_argument("conv: kernel larger than padded input");
  g.oh = (g.padded.shape.h - kh) / stride + 1;
  g.ow = (g.padded.shape.w - kw) / stride + 1;
  return g;
}

}  // namespace

QTensor conv2d_fixed(const QTensor& x, const QTensor& w, int stride,
                     const PadSpec& pad, QFormat out_fmt,
                     std::span<const float> bias) {
  const int kh = w.shape.n, kw = w.shape.h, cin = w.shape.w, cout = w.shape.c;
  if (!bias.empty() && static_cast<int>(bias.size()) != cout)
    throw std::invalid_argument("conv: bias size != cout");
  const ConvGeom g = prepare_fixed(x, kh, kw, stride, pad, false, w.shape);
  const QTensor& xp = g.padded;
  const int acc_frac = x.fmt.n + w.fmt.n;

  std::vector<std::int64_t> bias_acc(static_cast<std::size_t>(cout), 0);
  for (std::size_t i = 0; i < bias.size(); ++i)
    bias_acc[i] = bias_at_acc_scale(bias[i], acc_frac);

  QTensor out(TensorShape{x.shape.n, g.oh, g.ow, cout}, out_fmt);
  std::vector<std::int64_t> acc(static_cast<std::size_t>(cout));
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < g.oh; ++oy)
      for (int ox = 0; ox < g.ow; ++ox) {
        std::copy(bias_acc.begin(), bias_acc.end(), acc.begin());
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const std::int32_t* xrow =
                &xp.raw[xp.index(n, oy * stride + ky, ox * stride + kx, 0)];
            const std::int32_t* wrow = &w.raw[w.index(ky, kx, 0, 0)];
            for (int ic = 0; ic < cin; ++ic) {
              const std::int64_t xv = xrow[ic];
              const std::int32_t* wr = wrow + static_cast<std::size_t>(ic) * cout;
              for (int oc = 0; oc < cout; ++oc)
                acc[oc] = qmac_raw(acc[oc], xv, wr[oc]);
            }
          }
        std::int32_t* orow = &out.raw[out.index(n, oy, ox, 0)];
        for (int oc = 0; oc < cout; ++oc)
          orow[oc] = requantize(acc[oc], acc_frac, out_fmt).raw;
      }
  return out;
}

QTensor depthwise_conv2d_fixed(const QTensor& x, const QTensor& w, int stride,
                               const PadSpec& pad, QFormat out_fmt,
                               std::span<const float> bias) {
  const int kh = w.shape.n, kw = w.shape.h, c = x.shape.c;
  if (!bias.empty() && static_cast<int>(bias.size()) != c)
    throw std::invalid_argument("depthwise: bias size != channels");
  const ConvGeom g = prepare_fixed(x, kh, kw, stride, pad, true, w.shape);
  const QTensor& xp = g.padded;
  const int acc_frac = x.fmt.n + w.fmt.n;

  std::vector<std::int64_t> bias_acc(static_cast<std::size_t>(c), 0);
  for (std::size_t i = 0; i < bias.size(); ++i)
    bias_acc[i] = bias_at_acc_scale(bias[i], acc_frac);

  QTensor out(TensorShape{x.shape.n, g.oh, g.ow, c}, out_fmt);
  std::vector<std::int64_t> acc(static_cast<std::size_t>(c));
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < g.oh; ++oy)
      for (int ox = 0; ox < g.ow; ++ox) {
        std::copy(bias_acc.begin(), bias_acc.end(), acc.begin());
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const std::int32_t* xrow =
                &xp.raw[xp.index(n, oy * stride + ky, ox * stride + kx, 0)];
            const std::int32_t* wrow = &w.raw[w.index(ky, kx, 0, 0)];
            for (int ch = 0; ch < c; ++ch)
              acc[ch] = qmac_raw(acc[ch], xrow[ch], wrow[ch]);
          }
        std::int32_t* orow = &out.raw[out.index(n, oy, ox, 0)];
        for (int ch = 0; ch < c; ++ch)
          orow[ch] = requantize(acc[ch], acc_frac, out_fmt).raw;
      }
  return out;
}

QTensor relu6_fixed(const QTensor& x) {
  const std::int64_t six = std::min<std::int64_t>(
      x.fmt.raw_max(), std::int64_t(6) << x.fmt.n);
  QTensor out = x;
  for (std::int32_t& v : out.raw)
    v = static_cast<std::int32_t>(std::clamp<std::int64_t>(v, 0, six));
  return out;
}

QTensor add_fixed(const QTensor& a, const QTensor& b) {
  if (!(a.shape == b.shape)) throw std::invalid_argument("add: shape mismatch");
  if (!(a.fmt == b.fmt)) throw std::invalid_argument("add: format mismatch");
  QTensor out = a;
  for (std::size_t i = 0; i < out.raw.size(); ++i)
    out.raw[i] = static_cast<std::int32_t>(
        saturate_raw(std::int64_t(out.raw[i]) + b.raw[i], a.fmt));
  return out;
}

QTensor upsample2x_fixed(const QTensor& x) {
  if (x.shape.h < 1 || x.shape.w < 1)
    throw std::invalid_argument("upsample2x: empty spatial extent");
  const int ih = x.shape.h, iw = x.shape.w, c = x.shape.c;
  const int oh = 2 * ih, ow = 2 * iw;

  // Per output index: source coordinate i/2 - 1/4, i.e. quarters. Weight of
  // the far sample in quarters is 0, 1, or 3 after edge clamping.
  auto axis = [](int o, int in, int& i0, int& i1, int& wq) {
    const int q = 2 * o - 1;  // source position in quarters
    if (q < 0) { i0 = i1 = 0; wq = 0; return; }
    if (q >= 4 * (in - 1)) { i0 = i1 = in - 1; wq = 0; return; }
    i0 = q / 4;
    i1 = i0 + 1;
    wq = q % 4;
  };

  QTensor out(TensorShape{x.shape.n, oh, ow, c}, x.fmt);
  for (int n = 0; n < x.shape.n; ++n)
    for (int oy = 0; oy < oh; ++oy) {
      int y0, y1, wy;
      axis(oy, ih, y0, y1, wy);
      for (int ox = 0; ox < ow; ++ox) {
        int x0, x1, wx;
        axis(ox, iw, x0, x1, wx);
        const std::int64_t w00 = std::int64_t(4 - wy) * (4 - wx);
        const std::int64_t w01 = std::int64_t(4 - wy) * wx;
        const std::int64_t w10 = std::int64_t(wy) * (4 - wx);
        const std::int64_t w11 = std::int64_t(wy) * wx;
        const std::int32_t* p00 = &x.raw[x.index(n, y0, x0, 0)];
        const std::int32_t* p01 = &x.raw[x.index(n, y0, x1, 0)];
        const std::int32_t* p10 = &x.raw[x.index(n, y1, x0, 0)];
        const std::int32_t* p11 = &x.raw[x.index(n, y1, x1, 0)];
        std::int32_t* o = &out.raw[out.index(n, oy, ox, 0)];
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t acc =
              w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
          o[ch] = static_cast<std::int32_t>(
              saturate_raw(shift_round_half_even(acc, 4), x.fmt));
        }
      }
    }
  return out;
}

QTensor concat_channels_fixed(const QTensor& a, const QTensor& b) {
  if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
    throw std::invalid_argument("concat: spatial shape mismatch");
  if (!(a.fmt == b.fmt)) throw std::invalid_argument("concat: format mismatch");
  QTensor out(TensorShape{a.shape.n, a.shape.h, a.shape.w, a.shape.c + b.shape.c},
              a.fmt);
  for (int n = 0; n < a.shape.n; ++n)
    for (int y = 0; y < a.shape.h; ++y)
      for (int x = 0; x < a.shape.w; ++x) {
        std::int32_t* dst = &out.raw[out.index(n, y, x, 0)];
        if (a.shape.c) {
          const std::int32_t* pa = &a.raw[a.index(n, y, x, 0)];
          std::copy(pa, pa + a.shape.c, dst);
        }
        if (b.shape.c) {
          const std::int32_t* pb = &b.raw[b.index(n, y, x, 0)];
          std::copy(pb, pb + b.shape.c, dst + a.shape.c);
        }
      }
  return out;
}

}  // namespace qdm
