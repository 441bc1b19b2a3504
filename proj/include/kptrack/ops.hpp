#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kptrack/autodiff.hpp"
#include "kptrack/tensor.hpp"

// Differentiable ops over single-sample [C,H,W] tensors. Every op computes its
// forward value eagerly and, when a tape is active and an input requires
// grad, records a closure that accumulates input gradients from the
// output gradient.

namespace kptrack::ops {

namespace detail {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

struct ConvGeometry {
  std::int64_t cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::int64_t rows() const { return cin * kh * kw; }
  std::int64_t cols() const { return ho * wo; }
};

inline void im2col(const float* in, const ConvGeometry& g, float* cols) {
  const std::int64_t n = g.cols();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        float* row = cols + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          float* dst = row + oy * g.wo;
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0f);
            continue;
          }
          const float* src = in + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const float* cols, const ConvGeometry& g, float* out) {
  const std::int64_t n = g.cols();
  for (std::int64_t c = 0; c < g.cin; ++c) {
    for (std::int64_t ky = 0; ky < g.kh; ++ky) {
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const float* row = cols + ((c * g.kh + ky) * g.kw + kx) * n;
        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
          const std::int64_t iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const float* src = row + oy * g.wo;
          float* dst = out + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.wo; ++ox) {
            const std::int64_t ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Per-axis bilinear taps for align_corners=false resampling.
struct AxisTaps {
  std::vector<std::int64_t> i0, i1;
  std::vector<float> w1;
};

inline AxisTaps upsample_taps(std::int64_t in, std::int64_t factor) {
  AxisTaps t;
  const std::int64_t out = in * factor;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = 1.0 / static_cast<double>(factor);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    t.i0[o] = i0;
    t.i1[o] = std::min(i0 + 1, in - 1);
    t.w1[o] = static_cast<float>(src - static_cast<double>(i0));
  }
  return t;
}

}  // namespace detail

/// 2-D convolution (cross-correlation) with zero padding.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride = 1,
                     int pad = 0) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weight.dim(0), weight.dim(2),
                         weight.dim(3), stride,        pad,          0,             0};
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels but weight expects " +
                     std::to_string(weight.dim(1)) + " (weight " + shape_str(weight.shape()) + ")");
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
  require_shape(bias, Shape{g.cout}, "conv2d bias");
  g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  Tensor out(Shape{g.cout, g.ho, g.wo});
  std::vector<float> cols(static_cast<std::size_t>(g.rows() * g.cols()));
  detail::im2col(input.ptr(), g, cols.data());
  detail::ConstMatMap wmat(weight.ptr(), g.cout, g.rows());
  detail::ConstMatMap cmat(cols.data(), g.rows(), g.cols());
  detail::MatMap omat(out.ptr(), g.cout, g.cols());
  omat.noalias() = wmat * cmat;
  for (std::int64_t o = 0; o < g.cout; ++o) omat.row(o).array() += bias[o];

  kptrack::detail::record_op(out, {&input, &weight, &bias}, [input = input, weight = weight, bias = bias, out, g]() mutable {
    detail::ConstMatMap gout(out.grad().data(), g.cout, g.cols());
    if (bias.requires_grad()) {
      auto gb = bias.grad_buffer();
      for (std::int64_t o = 0; o < g.cout; ++o) {
        double s = 0.0;
        const float* row = out.grad().data() + o * g.cols();
        for (std::int64_t i = 0; i < g.cols(); ++i) s += row[i];
        gb[o] += static_cast<float>(s);
      }
    }
    if (weight.requires_grad()) {
      std::vector<float> cols(static_cast<std::size_t>(g.rows() * g.cols()));
      detail::im2col(input.ptr(), g, cols.data());
      detail::ConstMatMap cmat(cols.data(), g.rows(), g.cols());
      detail::MatMap gw(weight.grad_buffer().data(), g.cout, g.rows());
      gw.noalias() += gout * cmat.transpose();
    }
    if (input.requires_grad()) {
      std::vector<float> dcols(static_cast<std::size_t>(g.rows() * g.cols()));
      detail::MatMap dc(dcols.data(), g.rows(), g.cols());
      detail::ConstMatMap wmat(weight.ptr(), g.cout, g.rows());
      dc.noalias() = wmat.transpose() * gout;
      detail::col2im_add(dcols.data(), g, input.grad_buffer().data());
    }
  });
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0f ? in[i] : 0.0f;
  kptrack::detail::record_op(out, {&x}, [x = x, out]() mutable {
    auto g = out.grad();
    auto in = x.data();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > 0.0f) gx[i] += g[i];
    }
  });
  return out;
}

/// Per-pixel softmax over the channel axis of a [C,H,W] tensor.
inline Tensor softmax_channels(const Tensor& x) {
  require_rank(x, 3, "softmax_channels");
  const std::int64_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (c < 2) throw ShapeError("softmax_channels: need at least 2 channels");
  Tensor out(x.shape());
  const float* in = x.ptr();
  float* o = out.ptr();
  for (std::int64_t p = 0; p < hw; ++p) {
    float m = -std::numeric_limits<float>::infinity();
    for (std::int64_t k = 0; k < c; ++k) m = std::max(m, in[k * hw + p]);
    double s = 0.0;
    for (std::int64_t k = 0; k < c; ++k) {
      const double e = std::exp(static_cast<double>(in[k * hw + p] - m));
      o[k * hw + p] = static_cast<float>(e);
      s += e;
    }
    const double inv = 1.0 / s;
    for (std::int64_t k = 0; k < c; ++k) o[k * hw + p] = static_cast<float>(o[k * hw + p] * inv);
  }
  kptrack::detail::record_op(out, {&x}, [x = x, out, c, hw]() mutable {
    const float* g = out.grad().data();
    const float* p = out.ptr();
    float* gx = x.grad_buffer().data();
    for (std::int64_t i = 0; i < hw; ++i) {
      double dot = 0.0;
      for (std::int64_t k = 0; k < c; ++k) dot += static_cast<double>(g[k * hw + i]) * p[k * hw + i];
      for (std::int64_t k = 0; k < c; ++k) {
        gx[k * hw + i] += static_cast<float>(p[k * hw + i] * (g[k * hw + i] - dot));
      }
    }
  });
  return out;
}

/// Bilinear upsampling by an integer factor, align_corners = false.
inline Tensor bilinear_upsample(const Tensor& x, int factor) {
  require_rank(x, 3, "bilinear_upsample");
  if (factor < 1) throw ShapeError("bilinear_upsample: factor must be >= 1");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t oh = h * factor, ow = w * factor;
  auto ty = detail::upsample_taps(h, factor);
  auto tx = detail::upsample_taps(w, factor);
  Tensor out(Shape{c, oh, ow});
  for (std::int64_t k = 0; k < c; ++k) {
    const float* in = x.ptr() + k * h * w;
    float* o = out.ptr() + k * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const float wy = ty.w1[y];
      const float* r0 = in + ty.i0[y] * w;
      const float* r1 = in + ty.i1[y] * w;
      for (std::int64_t xx = 0; xx < ow; ++xx) {
        const float wx = tx.w1[xx];
        const float top = r0[tx.i0[xx]] * (1.0f - wx) + r0[tx.i1[xx]] * wx;
        const float bot = r1[tx.i0[xx]] * (1.0f - wx) + r1[tx.i1[xx]] * wx;
        o[y * ow + xx] = top * (1.0f - wy) + bot * wy;
      }
    }
  }
  kptrack::detail::record_op(out, {&x}, [x = x, out, ty, tx, c, h, w, oh, ow]() mutable {
    float* gx = x.grad_buffer().data();
    const float* g = out.grad().data();
    for (std::int64_t k = 0; k < c; ++k) {
      float* gi = gx + k * h * w;
      const float* go = g + k * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y) {
        const float wy = ty.w1[y];
        float* r0 = gi + ty.i0[y] * w;
        float* r1 = gi + ty.i1[y] * w;
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const float v = go[y * ow + xx];
          const float wx = tx.w1[xx];
          r0[tx.i0[xx]] += v * (1.0f - wy) * (1.0f - wx);
          r0[tx.i1[xx]] += v * (1.0f - wy) * wx;
          r1[tx.i0[xx]] += v * wy * (1.0f - wx);
          r1[tx.i1[xx]] += v * wy * wx;
        }
      }
    }
  });
  return out;
}

/// Backward warp: out(x,y) = bilinear sample of `x` at (x+u, y+v) with border
/// clamping. `flow` is [2,H,W] in pixels (channel 0 = u, 1 = v) and is
/// treated as a constant.
inline Tensor grid_sample_flow(const Tensor& x, const Tensor& flow) {
  require_rank(x, 3, "grid_sample_flow input");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require_shape(flow, Shape{2, h, w}, "grid_sample_flow flow");
  const std::int64_t hw = h * w;
  struct Tap {
    std::int64_t i00, i01, i10, i11;
    float w00, w01, w10, w11;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(hw));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t xx = 0; xx < w; ++xx) {
      const std::int64_t p = y * w + xx;
      const double sx = std::clamp(static_cast<double>(xx) + flow[p], 0.0, static_cast<double>(w - 1));
      const double sy = std::clamp(static_cast<double>(y) + flow[hw + p], 0.0, static_cast<double>(h - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto y0 = static_cast<std::int64_t>(std::floor(sy));
      const std::int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const auto ax = static_cast<float>(sx - static_cast<double>(x0));
      const auto ay = static_cast<float>(sy - static_cast<double>(y0));
      taps[p] = {y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
                 (1.0f - ay) * (1.0f - ax), (1.0f - ay) * ax, ay * (1.0f - ax), ay * ax};
    }
  }
  Tensor out(x.shape());
  for (std::int64_t k = 0; k < c; ++k) {
    const float* in = x.ptr() + k * hw;
    float* o = out.ptr() + k * hw;
    for (std::int64_t p = 0; p < hw; ++p) {
      const Tap& t = taps[p];
      o[p] = in[t.i00] * t.w00 + in[t.i01] * t.w01 + in[t.i10] * t.w10 + in[t.i11] * t.w11;
    }
  }
  kptrack::detail::record_op(out, {&x}, [x = x, out, taps = std::move(taps), c, hw]() mutable {
    float* gx = x.grad_buffer().data();
    const float* g = out.grad().data();
    for (std::int64_t k = 0; k < c; ++k) {
      float* gi = gx + k * hw;
      const float* go = g + k * hw;
      for (std::int64_t p = 0; p < hw; ++p) {
        const Tap& t = taps[p];
        gi[t.i00] += go[p] * t.w00;
        gi[t.i01] += go[p] * t.w01;
        gi[t.i10] += go[p] * t.w10;
        gi[t.i11] += go[p] * t.w11;
      }
    }
  });
  return out;
}

/// Concatenates [Ci,H,W] tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  require_rank(parts[0], 3, "concat_channels");
  const std::int64_t h = parts[0].dim(1), w = parts[0].dim(2);
  std::int64_t c = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(1) != h || p.dim(2) != w) {
      throw ShapeError("concat_channels: spatial size mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    c += p.dim(0);
  }
  Tensor out(Shape{c, h, w});
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.size();
  }
  Tape* tape = Tape::current();
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (tape && needs) {
    out.set_requires_grad(true);
    tape->record(out, [parts = parts, out]() mutable {
      std::int64_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          kptrack::detail::accumulate(p, out.grad().subspan(static_cast<std::size_t>(offset),
                                                           static_cast<std::size_t>(p.size())));
        }
        offset += p.size();
      }
    });
  }
  return out;
}

/// Top-left crop of a [C,H,W] tensor to [C,h,w].
inline Tensor crop(const Tensor& x, std::int64_t h, std::int64_t w) {
  require_rank(x, 3, "crop");
  const std::int64_t c = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  if (h > ih || w > iw || h < 1 || w < 1) throw ShapeError("crop: target larger than input");
  if (h == ih && w == iw) return x;
  Tensor out(Shape{c, h, w});
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(x.ptr() + (k * ih + y) * iw, w, out.ptr() + (k * h + y) * w);
  kptrack::detail::record_op(out, {&x}, [x = x, out, c, h, w, ih, iw]() mutable {
    float* gx = x.grad_buffer().data();
    const float* g = out.grad().data();
    for (std::int64_t k = 0; k < c; ++k)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xx = 0; xx < w; ++xx) gx[(k * ih + y) * iw + xx] += g[(k * h + y) * w + xx];
  });
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "add");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  kptrack::detail::record_op(out, {&a, &b}, [a = a, b = b, out]() mutable {
    kptrack::detail::accumulate(a, out.grad());
    kptrack::detail::accumulate(b, out.grad());
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "mul");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  kptrack::detail::record_op(out, {&a, &b}, [a = a, b = b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[static_cast<std::int64_t>(i)];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[static_cast<std::int64_t>(i)];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& x, float s) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
  kptrack::detail::record_op(out, {&x}, [x = x, out, s]() mutable {
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
  return out;
}

inline Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = std::log(x[i]);
  kptrack::detail::record_op(out, {&x}, [x = x, out]() mutable {
    auto g = out.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[static_cast<std::int64_t>(i)];
  });
  return out;
}

/// Sum of all elements, accumulated in double.
inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  Tensor out = Tensor::scalar(static_cast<float>(s));
  kptrack::detail::record_op(out, {&x}, [x = x, out]() mutable {
    const float g = out.grad()[0];
    for (float& v : x.grad_buffer()) v += g;
  });
  return out;
}

/// Edge-replicating pad of a [C,H,W] tensor so H and W become multiples of
/// `multiple`. Not differentiable; used on raw frames only.
inline Tensor pad_replicate_to_multiple(const Tensor& x, std::int64_t multiple) {
  require_rank(x, 3, "pad_replicate_to_multiple");
  const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::int64_t ph = (h + multiple - 1) / multiple * multiple;
  const std::int64_t pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return x;
  Tensor out(Shape{c, ph, pw});
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t xx = 0; xx < pw; ++xx)
        out.at(k, y, xx) = x.at(k, std::min(y, h - 1), std::min(xx, w - 1));
  return out;
}

}  // namespace kptrack::ops
