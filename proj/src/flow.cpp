#include "i3d/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "i3d/error.hpp"
#include "i3d/parallel.hpp"

namespace i3d {
namespace {

// Single-channel float image, row-major.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<float> d;

  Plane() = default;
  Plane(int width, int height, float fill = 0.0f)
      : w(width), h(height), d(static_cast<size_t>(width) * height, fill) {}
  float& operator()(int x, int y) { return d[static_cast<size_t>(y) * w + x]; }
  float operator()(int x, int y) const { return d[static_cast<size_t>(y) * w + x]; }
};

void for_rows(int h, const std::function<void(int)>& fn) {
  parallel_for(0, h, [&](int64_t y, int) { fn(static_cast<int>(y)); });
}

// Bilinear sample with coordinates clamped to the image (replicated border).
float sample(const Plane& p, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(p.w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(p.h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, p.w - 1);
  const int y1 = std::min(y0 + 1, p.h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = (1.0 - fx) * p(x0, y0) + fx * p(x1, y0);
  const double bottom = (1.0 - fx) * p(x0, y1) + fx * p(x1, y1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Plane gaussian_blur(const Plane& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<size_t>(i + radius)];
  }
  for (double& v : k) v /= sum;
  Plane tmp(in.w, in.h);
  Plane out(in.w, in.h);
  for_rows(in.h, [&](int y) {
    for (int x = 0; x < in.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<size_t>(i + radius)] * in(std::clamp(x + i, 0, in.w - 1), y);
      }
      tmp(x, y) = static_cast<float>(acc);
    }
  });
  for_rows(in.h, [&](int y) {
    for (int x = 0; x < in.w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k[static_cast<size_t>(i + radius)] * tmp(x, std::clamp(y + i, 0, in.h - 1));
      }
      out(x, y) = static_cast<float>(acc);
    }
  });
  return out;
}

// Resample to (w, h) reading source coordinates x / factor.
Plane zoom(const Plane& in, int w, int h, double factor) {
  Plane out(w, h);
  for_rows(h, [&](int y) {
    for (int x = 0; x < w; ++x) out(x, y) = sample(in, x / factor, y / factor);
  });
  return out;
}

// Central differences with replicated borders.
void centered_gradient(const Plane& in, Plane& gx, Plane& gy) {
  gx = Plane(in.w, in.h);
  gy = Plane(in.w, in.h);
  for_rows(in.h, [&](int y) {
    const int ym = std::max(y - 1, 0);
    const int yp = std::min(y + 1, in.h - 1);
    for (int x = 0; x < in.w; ++x) {
      const int xm = std::max(x - 1, 0);
      const int xp = std::min(x + 1, in.w - 1);
      gx(x, y) = 0.5f * (in(xp, y) - in(xm, y));
      gy(x, y) = 0.5f * (in(x, yp) - in(x, ym));
    }
  });
}

// Forward differences, zero on the last column/row.
void forward_gradient(const Plane& in, Plane& gx, Plane& gy) {
  for_rows(in.h, [&](int y) {
    for (int x = 0; x < in.w; ++x) {
      gx(x, y) = x + 1 < in.w ? in(x + 1, y) - in(x, y) : 0.0f;
      gy(x, y) = y + 1 < in.h ? in(x, y + 1) - in(x, y) : 0.0f;
    }
  });
}

// Negative adjoint of forward_gradient.
void divergence(const Plane& px, const Plane& py, Plane& div) {
  const int w = px.w;
  const int h = px.h;
  for_rows(h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      float dx = 0.0f;
      if (w == 1) {
        dx = 0.0f;
      } else if (x == 0) {
        dx = px(x, y);
      } else if (x == w - 1) {
        dx = -px(x - 1, y);
      } else {
        dx = px(x, y) - px(x - 1, y);
      }
      float dy = 0.0f;
      if (h == 1) {
        dy = 0.0f;
      } else if (y == 0) {
        dy = py(x, y);
      } else if (y == h - 1) {
        dy = -py(x, y - 1);
      } else {
        dy = py(x, y) - py(x, y - 1);
      }
      div(x, y) = dx + dy;
    }
  });
}

Plane warp(const Plane& img, const Plane& u1, const Plane& u2) {
  Plane out(img.w, img.h);
  for_rows(img.h, [&](int y) {
    for (int x = 0; x < img.w; ++x) {
      out(x, y) = sample(img, x + static_cast<double>(u1(x, y)), y + static_cast<double>(u2(x, y)));
    }
  });
  return out;
}

double energy(const Plane& i0, const Plane& i1, const Plane& u1, const Plane& u2, double lambda) {
  const int w = i0.w;
  const int h = i0.h;
  double tv = 0.0;
  double data = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u1x = x + 1 < w ? u1(x + 1, y) - u1(x, y) : 0.0;
      const double u1y = y + 1 < h ? u1(x, y + 1) - u1(x, y) : 0.0;
      const double u2x = x + 1 < w ? u2(x + 1, y) - u2(x, y) : 0.0;
      const double u2y = y + 1 < h ? u2(x, y + 1) - u2(x, y) : 0.0;
      tv += std::sqrt(u1x * u1x + u1y * u1y) + std::sqrt(u2x * u2x + u2y * u2y);
      const double warped =
          sample(i1, x + static_cast<double>(u1(x, y)), y + static_cast<double>(u2(x, y)));
      data += std::abs(warped - i0(x, y));
    }
  }
  return tv + lambda * data;
}

Plane to_plane(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string("tvl1: ") + what + " must be (H, W), got " +
                     shape_to_string(t.shape()));
  }
  t.require_finite(std::string("tvl1 ") + what);
  Plane p(static_cast<int>(t.dim(1)), static_cast<int>(t.dim(0)));
  std::copy(t.data().begin(), t.data().end(), p.d.begin());
  return p;
}

bool is_constant(const Plane& p) {
  const auto [lo, hi] = std::minmax_element(p.d.begin(), p.d.end());
  return *lo == *hi;
}

// Shared affine map of both frames onto 0..255.
void normalize_pair(Plane& a, Plane& b) {
  const auto [alo, ahi] = std::minmax_element(a.d.begin(), a.d.end());
  const auto [blo, bhi] = std::minmax_element(b.d.begin(), b.d.end());
  const double lo = std::min(*alo, *blo);
  const double hi = std::max(*ahi, *bhi);
  if (hi <= lo) return;
  const double s = 255.0 / (hi - lo);
  for (float& v : a.d) v = static_cast<float>((v - lo) * s);
  for (float& v : b.d) v = static_cast<float>((v - lo) * s);
}

struct Dual {
  Plane p11, p12, p21, p22;
  explicit Dual(int w, int h) : p11(w, h), p12(w, h), p21(w, h), p22(w, h) {}
};

// One warp: linearize around (u1, u2), then alternate thresholding and dual
// TV steps.
void warp_step(const Plane& i0, const Plane& i1, const Plane& i1x, const Plane& i1y, Plane& u1,
               Plane& u2, Dual& dual, const TVL1Params& prm) {
  const int w = i0.w;
  const int h = i0.h;
  const Plane i1w = warp(i1, u1, u2);
  const Plane i1wx = warp(i1x, u1, u2);
  const Plane i1wy = warp(i1y, u1, u2);
  Plane grad(w, h);
  Plane rho_c(w, h);
  for_rows(h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const float gx = i1wx(x, y);
      const float gy = i1wy(x, y);
      grad(x, y) = gx * gx + gy * gy;
      rho_c(x, y) = i1w(x, y) - gx * u1(x, y) - gy * u2(x, y) - i0(x, y);
    }
  });

  const float l_t = static_cast<float>(prm.lambda * prm.theta);
  const float theta = static_cast<float>(prm.theta);
  const float taut = static_cast<float>(prm.tau / prm.theta);
  constexpr float kGradIsZero = 1e-10f;
  Plane v1(w, h), v2(w, h), div1(w, h), div2(w, h);
  Plane u1x(w, h), u1y(w, h), u2x(w, h), u2y(w, h);
  for (int it = 0; it < prm.inner_iterations; ++it) {
    for_rows(h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const float gx = i1wx(x, y);
        const float gy = i1wy(x, y);
        const float g = grad(x, y);
        const float rho = rho_c(x, y) + gx * u1(x, y) + gy * u2(x, y);
        float d1 = 0.0f;
        float d2 = 0.0f;
        if (rho < -l_t * g) {
          d1 = l_t * gx;
          d2 = l_t * gy;
        } else if (rho > l_t * g) {
          d1 = -l_t * gx;
          d2 = -l_t * gy;
        } else if (g > kGradIsZero) {
          const float f = -rho / g;
          d1 = f * gx;
          d2 = f * gy;
        }
        v1(x, y) = u1(x, y) + d1;
        v2(x, y) = u2(x, y) + d2;
      }
    });
    divergence(dual.p11, dual.p12, div1);
    divergence(dual.p21, dual.p22, div2);
    for_rows(h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        u1(x, y) = v1(x, y) + theta * div1(x, y);
        u2(x, y) = v2(x, y) + theta * div2(x, y);
      }
    });
    forward_gradient(u1, u1x, u1y);
    forward_gradient(u2, u2x, u2y);
    for_rows(h, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const float ng1 =
            1.0f + taut * std::sqrt(u1x(x, y) * u1x(x, y) + u1y(x, y) * u1y(x, y));
        const float ng2 =
            1.0f + taut * std::sqrt(u2x(x, y) * u2x(x, y) + u2y(x, y) * u2y(x, y));
        dual.p11(x, y) = (dual.p11(x, y) + taut * u1x(x, y)) / ng1;
        dual.p12(x, y) = (dual.p12(x, y) + taut * u1y(x, y)) / ng1;
        dual.p21(x, y) = (dual.p21(x, y) + taut * u2x(x, y)) / ng2;
        dual.p22(x, y) = (dual.p22(x, y) + taut * u2y(x, y)) / ng2;
      }
    });
  }
}

Tensor plane_tensor(const Plane& p) {
  return Tensor(Shape{p.h, p.w}, p.d);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return true;
}

constexpr float kFloTag = 202021.25f;

}  // namespace

void TVL1Params::validate() const {
  auto bad = [](const std::string& msg) { throw ConfigError("tvl1: " + msg); };
  if (!(lambda > 0.0)) bad("lambda must be > 0");
  if (!(theta > 0.0)) bad("theta must be > 0");
  if (!(tau > 0.0) || tau > 0.25) bad("tau must lie in (0, 0.25]");
  if (warps < 1) bad("warps must be >= 1");
  if (inner_iterations < 1) bad("inner_iterations must be >= 1");
  if (!(scale_factor > 0.0 && scale_factor < 1.0)) bad("scale_factor must lie in (0, 1)");
  if (max_levels < 1) bad("max_levels must be >= 1");
  if (min_size < 1) bad("min_size must be >= 1");
  if (!(clamp > 0.0)) bad("clamp must be > 0");
}

FlowField tvl1(const Tensor& frame_a, const Tensor& frame_b, const TVL1Params& params,
               TVL1Log* log) {
  params.validate();
  if (frame_a.shape() != frame_b.shape()) {
    throw ShapeError("tvl1: frame shapes differ: " + shape_to_string(frame_a.shape()) + " vs " +
                     shape_to_string(frame_b.shape()));
  }
  Plane a = to_plane(frame_a, "frame_a");
  Plane b = to_plane(frame_b, "frame_b");
  if (std::min(a.w, a.h) < params.min_size) {
    throw ConfigError("tvl1: frames " + std::to_string(a.h) + "x" + std::to_string(a.w) +
                      " are smaller than the minimum pyramid size " +
                      std::to_string(params.min_size));
  }
  if (log != nullptr) *log = TVL1Log{};
  FlowField flow{Tensor(Shape{a.h, a.w}), Tensor(Shape{a.h, a.w})};
  if (is_constant(a) || is_constant(b)) {
    if (log != nullptr) log->finest_energy.push_back(0.0);
    return flow;
  }
  normalize_pair(a, b);

  const double z = params.scale_factor;
  std::vector<Plane> pyr0{a};
  std::vector<Plane> pyr1{b};
  const double sigma = 0.6 * std::sqrt(1.0 / (z * z) - 1.0);
  while (static_cast<int>(pyr0.size()) < params.max_levels) {
    const Plane& p0 = pyr0.back();
    const int nw = static_cast<int>(p0.w * z + 0.5);
    const int nh = static_cast<int>(p0.h * z + 0.5);
    if (std::min(nw, nh) < params.min_size) break;
    pyr0.push_back(zoom(gaussian_blur(p0, sigma), nw, nh, z));
    pyr1.push_back(zoom(gaussian_blur(pyr1.back(), sigma), nw, nh, z));
  }

  const int levels = static_cast<int>(pyr0.size());
  Plane u1(pyr0.back().w, pyr0.back().h);
  Plane u2(pyr0.back().w, pyr0.back().h);
  for (int level = levels - 1; level >= 0; --level) {
    const Plane& i0 = pyr0[static_cast<size_t>(level)];
    const Plane& i1 = pyr1[static_cast<size_t>(level)];
    if (u1.w != i0.w || u1.h != i0.h) {
      // Upsample the coarser flow and rescale displacements.
      u1 = zoom(u1, i0.w, i0.h, 1.0 / z);
      u2 = zoom(u2, i0.w, i0.h, 1.0 / z);
      for (float& v : u1.d) v = static_cast<float>(v / z);
      for (float& v : u2.d) v = static_cast<float>(v / z);
    }
    Plane i1x, i1y;
    centered_gradient(i1, i1x, i1y);
    Dual dual(i0.w, i0.h);
    const bool finest = level == 0;
    double e_prev = finest ? energy(i0, i1, u1, u2, params.lambda) : 0.0;
    if (finest && log != nullptr) log->finest_energy.push_back(e_prev);
    for (int wi = 0; wi < params.warps; ++wi) {
      if (!finest) {
        warp_step(i0, i1, i1x, i1y, u1, u2, dual, params);
        continue;
      }
      const Plane keep1 = u1;
      const Plane keep2 = u2;
      const Dual keep_dual = dual;
      warp_step(i0, i1, i1x, i1y, u1, u2, dual, params);
      const double e = energy(i0, i1, u1, u2, params.lambda);
      if (e > e_prev) {
        // Undo; repeating from the same state would reproduce this warp.
        u1 = keep1;
        u2 = keep2;
        dual = keep_dual;
        if (log != nullptr) log->rejected_warps = params.warps - wi;
        break;
      }
      e_prev = e;
      if (log != nullptr) log->finest_energy.push_back(e);
    }
  }

  const float c = static_cast<float>(params.clamp);
  for (float& v : u1.d) v = std::clamp(v, -c, c);
  for (float& v : u2.d) v = std::clamp(v, -c, c);
  flow.u = plane_tensor(u1);
  flow.v = plane_tensor(u2);
  flow.u.require_finite("tvl1 flow u");
  flow.v.require_finite("tvl1 flow v");
  return flow;
}

double tvl1_energy(const Tensor& frame_a, const Tensor& frame_b, const FlowField& flow,
                   double lambda) {
  Plane a = to_plane(frame_a, "frame_a");
  Plane b = to_plane(frame_b, "frame_b");
  if (frame_a.shape() != frame_b.shape() || flow.u.shape() != frame_a.shape() ||
      flow.v.shape() != frame_a.shape()) {
    throw ShapeError("tvl1_energy: frames and flow must share one (H, W) shape");
  }
  if (!is_constant(a) && !is_constant(b)) normalize_pair(a, b);
  Plane u1(a.w, a.h);
  Plane u2(a.w, a.h);
  std::copy(flow.u.data().begin(), flow.u.data().end(), u1.d.begin());
  std::copy(flow.v.data().begin(), flow.v.data().end(), u2.d.begin());
  return energy(a, b, u1, u2, lambda);
}

Tensor flow_stack(const std::vector<Tensor>& frames, const TVL1Params& params) {
  if (frames.size() < 2) {
    throw ConfigError("flow_stack: need at least 2 frames, got " + std::to_string(frames.size()));
  }
  const Shape& s = frames.front().shape();
  if (s.size() != 2) throw ShapeError("flow_stack: frames must be (H, W) grayscale");
  const int64_t h = s[0];
  const int64_t w = s[1];
  const int64_t pairs = static_cast<int64_t>(frames.size()) - 1;
  Tensor out(Shape{2 * pairs, h, w});
  for (int64_t i = 0; i < pairs; ++i) {
    const FlowField f = tvl1(frames[static_cast<size_t>(i)], frames[static_cast<size_t>(i + 1)],
                             params);
    const float inv = static_cast<float>(1.0 / params.clamp);
    float* du = out.ptr() + (2 * i) * h * w;
    float* dv = out.ptr() + (2 * i + 1) * h * w;
    for (int64_t k = 0; k < h * w; ++k) {
      du[k] = f.u[k] * inv;
      dv[k] = f.v[k] * inv;
    }
  }
  return out;
}

Tensor rgb_to_gray(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw ShapeError("rgb_to_gray: expected (3, H, W), got " + shape_to_string(rgb.shape()));
  }
  const int64_t hw = rgb.dim(1) * rgb.dim(2);
  Tensor out(Shape{rgb.dim(1), rgb.dim(2)});
  for (int64_t i = 0; i < hw; ++i) {
    out[i] = 0.299f * rgb[i] + 0.587f * rgb[hw + i] + 0.114f * rgb[2 * hw + i];
  }
  return out;
}

void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  if (flow.u.rank() != 2 || flow.u.shape() != flow.v.shape()) {
    throw ShapeError("write_flo: u and v must be equal (H, W) planes");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  const int64_t h = flow.height();
  const int64_t w = flow.width();
  put_u32(os, std::bit_cast<uint32_t>(kFloTag));
  put_u32(os, static_cast<uint32_t>(w));
  put_u32(os, static_cast<uint32_t>(h));
  for (int64_t i = 0; i < h * w; ++i) {
    put_u32(os, std::bit_cast<uint32_t>(flow.u[i]));
    put_u32(os, std::bit_cast<uint32_t>(flow.v[i]));
  }
  if (!os) throw IoError("short write to '" + path.string() + "'");
}

FlowField read_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  uint32_t tag = 0, w = 0, h = 0;
  if (!get_u32(is, tag) || !get_u32(is, w) || !get_u32(is, h)) {
    throw FormatError(FormatError::Code::kTruncated, "'" + path.string() + "': short .flo header");
  }
  if (std::bit_cast<float>(tag) != kFloTag) {
    throw FormatError(FormatError::Code::kBadMagic, "'" + path.string() + "': not a .flo file");
  }
  const int32_t sw = static_cast<int32_t>(w);
  const int32_t sh = static_cast<int32_t>(h);
  if (sw <= 0 || sh <= 0 || static_cast<int64_t>(sw) * sh > (int64_t{1} << 28)) {
    throw FormatError(FormatError::Code::kBadHeader,
                      "'" + path.string() + "': bad .flo size " + std::to_string(sw) + "x" +
                          std::to_string(sh));
  }
  FlowField f{Tensor(Shape{sh, sw}), Tensor(Shape{sh, sw})};
  for (int64_t i = 0; i < static_cast<int64_t>(sw) * sh; ++i) {
    uint32_t u = 0, v = 0;
    if (!get_u32(is, u) || !get_u32(is, v)) {
      throw FormatError(FormatError::Code::kTruncated,
                        "'" + path.string() + "': truncated .flo payload");
    }
    f.u[i] = std::bit_cast<float>(u);
    f.v[i] = std::bit_cast<float>(v);
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw FormatError(FormatError::Code::kCorrupt,
                      "'" + path.string() + "': trailing bytes after .flo payload");
  }
  return f;
}

}  // namespace i3d
