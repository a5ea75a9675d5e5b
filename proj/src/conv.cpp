#include <Eigen/Core>
#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "i3d/error.hpp"
#include "i3d/ops.hpp"
#include "i3d/parallel.hpp"

namespace i3d {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using StridedConstMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

AxisPlan plan_axis(int64_t in, int kernel, int stride, Padding padding) {
  if (kernel < 1 || stride < 1) {
    throw ConfigError("kernel extent and stride must be >= 1");
  }
  AxisPlan p;
  p.in = in;
  p.kernel = kernel;
  p.stride = stride;
  if (padding == Padding::kSame) {
    p.out = (in + stride - 1) / stride;
    const int64_t total = std::max<int64_t>((p.out - 1) * stride + kernel - in, 0);
    p.pad_lo = total / 2;
  } else {
    if (in < kernel) {
      throw ShapeError("VALID window of extent " + std::to_string(kernel) +
                       " does not fit axis of length " + std::to_string(in));
    }
    p.out = (in - kernel) / stride + 1;
    p.pad_lo = 0;
  }
  if (p.out < 1) throw ShapeError("window produces empty output axis");
  return p;
}

ConvSpec ConvSpec::cube(int k, int s, Padding p) {
  ConvSpec spec;
  spec.kernel = {k, k, k};
  spec.stride = {s, s, s};
  spec.padding = {p, p, p};
  return spec;
}

ConvSpec ConvSpec::planar(int k, int s, Padding p) {
  ConvSpec spec;
  spec.kernel = {1, k, k};
  spec.stride = {1, s, s};
  spec.padding = {p, p, p};
  return spec;
}

void ConvSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw ConfigError("kernel extents must be >= 1");
    if (stride[a] < 1) throw ConfigError("strides must be >= 1");
  }
}

std::array<AxisPlan, 3> plan_window(const Shape& input, const ConvSpec& spec) {
  if (input.size() != 5) {
    throw ShapeError("expected (N, C, T, H, W) input, got " + shape_to_string(input));
  }
  spec.validate();
  std::array<AxisPlan, 3> plans;
  for (int a = 0; a < 3; ++a) {
    plans[a] = plan_axis(input[2 + a], spec.kernel[a], spec.stride[a], spec.padding[a]);
  }
  return plans;
}

namespace {

struct ConvGeometry {
  int64_t n = 0, ci = 0, co = 0;
  int64_t t = 0, h = 0, w = 0;
  std::array<AxisPlan, 3> ax;
  int64_t k = 0;         // ci * kT * kH * kW
  int64_t in_plane = 0;  // T * H * W
  int64_t out_plane = 0; // To * Ho * Wo
  int64_t out_frame = 0; // Ho * Wo
  bool pointwise = false;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel,
                           const ConvSpec& spec) {
  if (input.rank() != 5) {
    throw ShapeError("conv3d: input must be (N, C, T, H, W), got " +
                     shape_to_string(input.shape()));
  }
  if (kernel.rank() != 5 && kernel.rank() != 4) {
    throw ShapeError("conv3d: kernel must be (Co, Ci, kT, kH, kW) or (Co, Ci, kH, kW), got " +
                     shape_to_string(kernel.shape()));
  }
  const int64_t kt = kernel.rank() == 5 ? kernel.dim(2) : 1;
  const int64_t kh = kernel.dim(-2);
  const int64_t kw = kernel.dim(-1);
  if (kt != spec.kernel[0] || kh != spec.kernel[1] || kw != spec.kernel[2]) {
    throw ShapeError("conv3d: kernel " + shape_to_string(kernel.shape()) +
                     " disagrees with window (" + std::to_string(spec.kernel[0]) + "," +
                     std::to_string(spec.kernel[1]) + "," +
                     std::to_string(spec.kernel[2]) + ")");
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv3d: input " + shape_to_string(input.shape()) +
                     " has " + std::to_string(input.dim(1)) +
                     " channels but kernel " + shape_to_string(kernel.shape()) +
                     " expects " + std::to_string(kernel.dim(1)));
  }
  ConvGeometry g;
  g.n = input.dim(0);
  g.ci = input.dim(1);
  g.t = input.dim(2);
  g.h = input.dim(3);
  g.w = input.dim(4);
  g.co = kernel.dim(0);
  g.ax = plan_window(input.shape(), spec);
  g.k = g.ci * kt * kh * kw;
  g.in_plane = g.t * g.h * g.w;
  g.out_frame = g.ax[1].out * g.ax[2].out;
  g.out_plane = g.ax[0].out * g.out_frame;
  g.pointwise = kt == 1 && kh == 1 && kw == 1 && spec.stride[0] == 1 &&
                spec.stride[1] == 1 && spec.stride[2] == 1;
  return g;
}

// Number of output frames gathered per GEMM so the column buffer stays small.
int64_t time_block(const ConvGeometry& g) {
  constexpr int64_t kBudget = int64_t{1} << 22;
  const int64_t per_frame = std::max<int64_t>(1, g.k * g.out_frame);
  return std::clamp<int64_t>(kBudget / per_frame, 1, g.ax[0].out);
}

// Gathers input windows of output frames [t0, t1) into a (K, P) matrix.
void im2col(const float* in, const ConvGeometry& g, int64_t t0, int64_t t1, float* cols) {
  const auto& [at, ah, aw] = g.ax;
  const int64_t ho_n = ah.out, wo_n = aw.out;
  const int64_t block = (t1 - t0) * g.out_frame;
  int64_t row = 0;
  for (int64_t c = 0; c < g.ci; ++c) {
    for (int kt = 0; kt < at.kernel; ++kt) {
      for (int kh = 0; kh < ah.kernel; ++kh) {
        for (int kw = 0; kw < aw.kernel; ++kw, ++row) {
          float* dst = cols + row * block;
          for (int64_t to = t0; to < t1; ++to) {
            const int64_t ti = to * at.stride - at.pad_lo + kt;
            if (ti < 0 || ti >= g.t) {
              std::fill(dst, dst + g.out_frame, 0.0f);
              dst += g.out_frame;
              continue;
            }
            for (int64_t ho = 0; ho < ho_n; ++ho) {
              const int64_t hi = ho * ah.stride - ah.pad_lo + kh;
              if (hi < 0 || hi >= g.h) {
                std::fill(dst, dst + wo_n, 0.0f);
                dst += wo_n;
                continue;
              }
              const float* src = in + ((c * g.t + ti) * g.h + hi) * g.w;
              for (int64_t wo = 0; wo < wo_n; ++wo) {
                const int64_t wi = wo * aw.stride - aw.pad_lo + kw;
                *dst++ = (wi >= 0 && wi < g.w) ? src[wi] : 0.0f;
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (K, P) columns back onto the input grid.
void col2im(const float* cols, const ConvGeometry& g, int64_t t0, int64_t t1, float* in) {
  const auto& [at, ah, aw] = g.ax;
  const int64_t ho_n = ah.out, wo_n = aw.out;
  const int64_t block = (t1 - t0) * g.out_frame;
  int64_t row = 0;
  for (int64_t c = 0; c < g.ci; ++c) {
    for (int kt = 0; kt < at.kernel; ++kt) {
      for (int kh = 0; kh < ah.kernel; ++kh) {
        for (int kw = 0; kw < aw.kernel; ++kw, ++row) {
          const float* src = cols + row * block;
          for (int64_t to = t0; to < t1; ++to) {
            const int64_t ti = to * at.stride - at.pad_lo + kt;
            if (ti < 0 || ti >= g.t) {
              src += g.out_frame;
              continue;
            }
            for (int64_t ho = 0; ho < ho_n; ++ho) {
              const int64_t hi = ho * ah.stride - ah.pad_lo + kh;
              if (hi < 0 || hi >= g.h) {
                src += wo_n;
                continue;
              }
              float* dst = in + ((c * g.t + ti) * g.h + hi) * g.w;
              for (int64_t wo = 0; wo < wo_n; ++wo, ++src) {
                const int64_t wi = wo * aw.stride - aw.pad_lo + kw;
                if (wi >= 0 && wi < g.w) dst[wi] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d_forward(const Tensor& input, const Tensor& kernel, const ConvSpec& spec,
                      const Tensor* bias) {
  const ConvGeometry g = conv_geometry(input, kernel, spec);
  input.require_finite("conv3d input");
  if (bias && bias->numel() != g.co) {
    throw ShapeError("conv3d: bias " + shape_to_string(bias->shape()) + " for " +
                     std::to_string(g.co) + " output channels");
  }
  Tensor out({g.n, g.co, g.ax[0].out, g.ax[1].out, g.ax[2].out});
  const MapConstMat weights(kernel.ptr(), g.co, g.k);
  const int64_t tb = time_block(g);
  std::vector<std::vector<float>> buffers(static_cast<size_t>(workers_for(g.n)));

  parallel_for(0, g.n, [&](int64_t n, int worker) {
    const float* in = input.ptr() + n * g.ci * g.in_plane;
    float* dst = out.ptr() + n * g.co * g.out_plane;
    if (g.pointwise) {
      const MapConstMat x(in, g.ci, g.in_plane);
      MapMat y(dst, g.co, g.out_plane);
      y.noalias() = weights * x;
      return;
    }
    auto& cols = buffers[static_cast<size_t>(worker)];
    for (int64_t t0 = 0; t0 < g.ax[0].out; t0 += tb) {
      const int64_t t1 = std::min(g.ax[0].out, t0 + tb);
      const int64_t block = (t1 - t0) * g.out_frame;
      cols.resize(static_cast<size_t>(g.k * block));
      im2col(in, g, t0, t1, cols.data());
      const MapConstMat c(cols.data(), g.k, block);
      StridedMat y(dst + t0 * g.out_frame, g.co, block, Eigen::OuterStride<>(g.out_plane));
      y.noalias() = weights * c;
    }
  });

  if (bias) {
    for (int64_t n = 0; n < g.n; ++n) {
      for (int64_t o = 0; o < g.co; ++o) {
        float* p = out.ptr() + (n * g.co + o) * g.out_plane;
        const float b = (*bias)[o];
        for (int64_t i = 0; i < g.out_plane; ++i) p[i] += b;
      }
    }
  }
  return out;
}

ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& kernel, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(input, kernel, spec);
  const Shape expected{g.n, g.co, g.ax[0].out, g.ax[1].out, g.ax[2].out};
  if (grad_out.shape() != expected) {
    throw ShapeError("conv3d_backward: grad_out " + shape_to_string(grad_out.shape()) +
                     " but forward output is " + shape_to_string(expected));
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(kernel.shape()), Tensor(Shape{g.co})};
  const MapConstMat weights(kernel.ptr(), g.co, g.k);
  const int64_t tb = time_block(g);
  const int workers = workers_for(g.n);
  std::vector<RowMat> partial(static_cast<size_t>(workers), RowMat::Zero(g.co, g.k));
  std::vector<std::vector<float>> cols_buf(static_cast<size_t>(workers));
  std::vector<std::vector<float>> dcols_buf(static_cast<size_t>(workers));

  parallel_for(0, g.n, [&](int64_t n, int worker) {
    const float* in = input.ptr() + n * g.ci * g.in_plane;
    const float* go = grad_out.ptr() + n * g.co * g.out_plane;
    float* gi = grads.input.ptr() + n * g.ci * g.in_plane;
    RowMat& dw = partial[static_cast<size_t>(worker)];
    if (g.pointwise) {
      const MapConstMat x(in, g.ci, g.in_plane);
      const MapConstMat dy(go, g.co, g.out_plane);
      dw.noalias() += dy * x.transpose();
      MapMat dx(gi, g.ci, g.in_plane);
      dx.noalias() = weights.transpose() * dy;
      return;
    }
    auto& cols = cols_buf[static_cast<size_t>(worker)];
    auto& dcols = dcols_buf[static_cast<size_t>(worker)];
    for (int64_t t0 = 0; t0 < g.ax[0].out; t0 += tb) {
      const int64_t t1 = std::min(g.ax[0].out, t0 + tb);
      const int64_t block = (t1 - t0) * g.out_frame;
      cols.resize(static_cast<size_t>(g.k * block));
      dcols.resize(static_cast<size_t>(g.k * block));
      im2col(in, g, t0, t1, cols.data());
      const MapConstMat c(cols.data(), g.k, block);
      const StridedConstMat dy(go + t0 * g.out_frame, g.co, block,
                               Eigen::OuterStride<>(g.out_plane));
      dw.noalias() += dy * c.transpose();
      MapMat dc(dcols.data(), g.k, block);
      dc.noalias() = weights.transpose() * dy;
      col2im(dcols.data(), g, t0, t1, gi);
    }
  });

  MapMat dk(grads.kernel.ptr(), g.co, g.k);
  for (const RowMat& p : partial) dk += p;
  for (int64_t o = 0; o < g.co; ++o) {
    double s = 0.0;
    for (int64_t n = 0; n < g.n; ++n) {
      const float* p = grad_out.ptr() + (n * g.co + o) * g.out_plane;
      for (int64_t i = 0; i < g.out_plane; ++i) s += p[i];
    }
    grads.bias[o] = static_cast<float>(s);
  }
  return grads;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride,
                      Padding padding, const Tensor* bias) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected (N, C, H, W) input and (Co, Ci, kH, kW) kernel, got " +
                     shape_to_string(input.shape()) + " and " +
                     shape_to_string(kernel.shape()));
  }
  if (kernel.dim(2) != kernel.dim(3)) {
    throw ShapeError("conv2d: only square kernels are supported, got " +
                     shape_to_string(kernel.shape()));
  }
  const Shape& s = input.shape();
  ConvSpec spec = ConvSpec::planar(static_cast<int>(kernel.dim(2)), stride, padding);
  Tensor out = conv3d_forward(input.reshaped({s[0], s[1], 1, s[2], s[3]}), kernel, spec, bias);
  const Shape& o = out.shape();
  return std::move(out).reshaped({o[0], o[1], o[3], o[4]});
}

}  // namespace i3d
