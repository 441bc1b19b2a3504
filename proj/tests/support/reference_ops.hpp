#pragma once

// Double-precision reference forward implementations, written with naive
// loops and no shared code with the library ops. Finite-difference oracles
// differentiate these so the numeric side is free of float32 noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "kptrack/tensor.hpp"

namespace kptrack::testing {

struct Ref {
  Shape shape;
  std::vector<double> v;

  Ref() = default;
  explicit Ref(Shape s, double fill = 0.0) : shape(std::move(s)), v(static_cast<std::size_t>(numel(shape)), fill) {}
  explicit Ref(const Tensor& t) : shape(t.shape()), v(t.data().begin(), t.data().end()) {}

  std::int64_t dim(std::size_t i) const { return shape[i]; }
  double& at(std::int64_t c, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
  }
  double at(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>((c * shape[1] + y) * shape[2] + x)];
  }
};

inline Ref ref_conv2d(const Ref& in, const Ref& w, const Ref& b, int stride, int pad) {
  const auto cin = in.dim(0), h = in.dim(1), wd = in.dim(2);
  const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  Ref out(Shape{cout, ho, wo});
  for (std::int64_t o = 0; o < cout; ++o)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t x = 0; x < wo; ++x) {
        double acc = b.v[static_cast<std::size_t>(o)];
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const auto iy = y * stride - pad + ky, ix = x * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += in.at(c, iy, ix) * w.v[static_cast<std::size_t>(((o * cin + c) * kh + ky) * kw + kx)];
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

inline Ref ref_relu(Ref x) {
  for (auto& e : x.v) e = std::max(e, 0.0);
  return x;
}

inline Ref ref_softmax(const Ref& x) {
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Ref out(x.shape);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t xx = 0; xx < w; ++xx) {
      double m = -1e300;
      for (std::int64_t k = 0; k < c; ++k) m = std::max(m, x.at(k, y, xx));
      double s = 0.0;
      for (std::int64_t k = 0; k < c; ++k) s += std::exp(x.at(k, y, xx) - m);
      for (std::int64_t k = 0; k < c; ++k) out.at(k, y, xx) = std::exp(x.at(k, y, xx) - m) / s;
    }
  return out;
}

/// Bilinear sample of channel k at continuous (sx, sy), clamped to the border.
inline double ref_sample(const Ref& x, std::int64_t k, double sx, double sy) {
  const auto h = x.dim(1), w = x.dim(2);
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::int64_t>(std::floor(sx)), y0 = static_cast<std::int64_t>(std::floor(sy));
  const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = sx - static_cast<double>(x0), ay = sy - static_cast<double>(y0);
  return (1 - ay) * ((1 - ax) * x.at(k, y0, x0) + ax * x.at(k, y0, x1)) +
         ay * ((1 - ax) * x.at(k, y1, x0) + ax * x.at(k, y1, x1));
}

inline Ref ref_upsample(const Ref& x, int f) {
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Ref out(Shape{c, h * f, w * f});
  for (std::int64_t k = 0; k < c; ++k)
    for (std::int64_t y = 0; y < h * f; ++y)
      for (std::int64_t xx = 0; xx < w * f; ++xx) {
        const double sy = std::max(0.0, (static_cast<double>(y) + 0.5) / f - 0.5);
        const double sx = std::max(0.0, (static_cast<double>(xx) + 0.5) / f - 0.5);
        out.at(k, y, xx) = ref_sample(x, k, sx, sy);
      }
  return out;
}

inline Ref ref_warp(const Ref& x, const Ref& flow) {
  Ref out(x.shape);
  for (std::int64_t k = 0; k < x.dim(0); ++k)
    for (std::int64_t y = 0; y < x.dim(1); ++y)
      for (std::int64_t xx = 0; xx < x.dim(2); ++xx)
        out.at(k, y, xx) = ref_sample(x, k, static_cast<double>(xx) + flow.at(0, y, xx),
                                      static_cast<double>(y) + flow.at(1, y, xx));
  return out;
}

inline Ref ref_add(Ref a, const Ref& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

inline Ref ref_concat(const std::vector<Ref>& parts) {
  std::int64_t c = 0;
  for (const auto& p : parts) c += p.dim(0);
  Ref out(Shape{c, parts[0].dim(1), parts[0].dim(2)});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.v.begin(), p.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.v.size();
  }
  return out;
}

/// Weighted per-pixel NLL with background weight `bg`, normalized by the
/// weight sum.
inline double ref_weighted_nll(const Ref& p, const std::vector<int>& target, double bg) {
  const auto hw = p.dim(1) * p.dim(2);
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < hw; ++i) {
    const int t = target[static_cast<std::size_t>(i)];
    const double w = t == 0 ? bg : 1.0;
    num += w * -std::log(std::max(p.v[static_cast<std::size_t>(t * hw + i)], 1e-8));
    den += w;
  }
  return num / den;
}

inline double ref_soft_jaccard(const Ref& p, const std::vector<int>& target, const std::vector<int>& classes,
                               double eps = 1e-7) {
  const auto hw = p.dim(1) * p.dim(2);
  double total = 0.0;
  for (int c : classes) {
    double inter = 0.0, ps = 0.0, gs = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) {
      const double pv = p.v[static_cast<std::size_t>(c * hw + i)];
      const double g = target[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0;
      inter += pv * g;
      ps += pv;
      gs += g;
    }
    total += (inter + eps) / (ps + gs - inter + eps);
  }
  return total / static_cast<double>(classes.size());
}

}  // namespace kptrack::testing
