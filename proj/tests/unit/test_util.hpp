#pragma once

// Reference implementations and numeric helpers shared by the test suites.
// Everything here is written directly from the operator definitions and does
// not call into the library's kernels.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "i3d/ops.hpp"
#include "i3d/tensor.hpp"

namespace i3d::testing {

inline Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Values spaced `gap` apart in random order: no near-ties, so max pooling has
// no kink within a finite-difference step.
inline Tensor distinct_tensor(Shape shape, std::mt19937& rng, float gap = 0.01f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = gap * static_cast<float>(i - t.numel() / 2);
  std::shuffle(t.data().begin(), t.data().end(), rng);
  return t;
}

// Low-side padding and output length, recomputed from the definition.
struct RefAxis {
  int64_t out;
  int64_t lo;
};

inline RefAxis ref_axis(int64_t in, int k, int s, Padding p) {
  if (p == Padding::kValid) return {(in - k) / s + 1, 0};
  const int64_t out = (in + s - 1) / s;
  const int64_t total = std::max<int64_t>((out - 1) * s + k - in, 0);
  return {out, total / 2};
}

// Direct summation over every kernel tap.
inline Tensor ref_conv3d(const Tensor& x, const Tensor& k, const ConvSpec& spec) {
  const int64_t n = x.dim(0), ci = x.dim(1), t = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int64_t co = k.dim(0);
  const int kt = spec.kernel[0], kh = spec.kernel[1], kw = spec.kernel[2];
  const RefAxis at = ref_axis(t, kt, spec.stride[0], spec.padding[0]);
  const RefAxis ah = ref_axis(h, kh, spec.stride[1], spec.padding[1]);
  const RefAxis aw = ref_axis(w, kw, spec.stride[2], spec.padding[2]);
  Tensor y({n, co, at.out, ah.out, aw.out});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < co; ++o)
      for (int64_t to = 0; to < at.out; ++to)
        for (int64_t ho = 0; ho < ah.out; ++ho)
          for (int64_t wo = 0; wo < aw.out; ++wo) {
            double s = 0.0;
            for (int64_t c = 0; c < ci; ++c)
              for (int a = 0; a < kt; ++a)
                for (int bb = 0; bb < kh; ++bb)
                  for (int cc = 0; cc < kw; ++cc) {
                    const int64_t ti = to * spec.stride[0] - at.lo + a;
                    const int64_t hi = ho * spec.stride[1] - ah.lo + bb;
                    const int64_t wi = wo * spec.stride[2] - aw.lo + cc;
                    if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                    s += double(x[(((b * ci + c) * t + ti) * h + hi) * w + wi]) *
                         k[(((o * ci + c) * kt + a) * kh + bb) * kw + cc];
                  }
            y.at({b, o, to, ho, wo}) = static_cast<float>(s);
          }
  return y;
}

// Single-image 2D correlation, (C, H, W) input and (Co, Ci, kH, kW) kernel.
inline Tensor ref_conv2d(const Tensor& x, const Tensor& k, int stride, Padding p) {
  const int64_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(0);
  const int kh = static_cast<int>(k.dim(2)), kw = static_cast<int>(k.dim(3));
  const RefAxis ah = ref_axis(h, kh, stride, p), aw = ref_axis(w, kw, stride, p);
  Tensor y({co, ah.out, aw.out});
  for (int64_t o = 0; o < co; ++o)
    for (int64_t ho = 0; ho < ah.out; ++ho)
      for (int64_t wo = 0; wo < aw.out; ++wo) {
        double s = 0.0;
        for (int64_t c = 0; c < ci; ++c)
          for (int a = 0; a < kh; ++a)
            for (int b = 0; b < kw; ++b) {
              const int64_t hi = ho * stride - ah.lo + a, wi = wo * stride - aw.lo + b;
              if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
              s += double(x.at({c, hi, wi})) * k.at({o, c, a, b});
            }
        y.at({o, ho, wo}) = static_cast<float>(s);
      }
  return y;
}

// Brute-force window scan; padding positions are skipped.
inline Tensor ref_pool3d(const Tensor& x, const PoolSpec& spec) {
  const ConvSpec& win = spec.window;
  const int64_t n = x.dim(0), c = x.dim(1), t = x.dim(2), h = x.dim(3), w = x.dim(4);
  const RefAxis at = ref_axis(t, win.kernel[0], win.stride[0], win.padding[0]);
  const RefAxis ah = ref_axis(h, win.kernel[1], win.stride[1], win.padding[1]);
  const RefAxis aw = ref_axis(w, win.kernel[2], win.stride[2], win.padding[2]);
  Tensor y({n, c, at.out, ah.out, aw.out});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t to = 0; to < at.out; ++to)
        for (int64_t ho = 0; ho < ah.out; ++ho)
          for (int64_t wo = 0; wo < aw.out; ++wo) {
            double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
            int count = 0;
            for (int a = 0; a < win.kernel[0]; ++a)
              for (int bb = 0; bb < win.kernel[1]; ++bb)
                for (int cc = 0; cc < win.kernel[2]; ++cc) {
                  const int64_t ti = to * win.stride[0] - at.lo + a;
                  const int64_t hi = ho * win.stride[1] - ah.lo + bb;
                  const int64_t wi = wo * win.stride[2] - aw.lo + cc;
                  if (ti < 0 || ti >= t || hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                  const double v = x.at({b, ch, ti, hi, wi});
                  best = std::max(best, v);
                  sum += v;
                  ++count;
                }
            y.at({b, ch, to, ho, wo}) = static_cast<float>(
                spec.kind == PoolKind::kMax ? best : sum / count);
          }
  return y;
}

// Central finite differences of a scalar function with respect to every
// element of `x`. The function is evaluated on a perturbed copy.
inline std::vector<double> numeric_gradient(const std::function<double(const Tensor&)>& f,
                                            const Tensor& x, double step = 1e-3) {
  std::vector<double> g(static_cast<size_t>(x.numel()));
  Tensor probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const float orig = probe[i];
    probe[i] = static_cast<float>(orig + step);
    const double up = f(probe);
    probe[i] = static_cast<float>(orig - step);
    const double down = f(probe);
    probe[i] = orig;
    g[static_cast<size_t>(i)] = (up - down) / (2.0 * step);
  }
  return g;
}

// ||a - n|| / max(||a||, ||n||) over the whole gradient.
inline double relative_error(const Tensor& analytic, const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (int64_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[static_cast<size_t>(i)];
    diff += (a - n) * (a - n);
    na += a * a;
    nn += n * n;
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return std::sqrt(diff) / denom;
}

// Scalar probe loss sum(r * y) in double precision.
inline double probe_loss(const Tensor& y, const Tensor& r) { return dot(y, r); }

}  // namespace i3d::testing
