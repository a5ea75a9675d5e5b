#include <algorithm>
#include <limits>
#include <string>

#include "i3d/error.hpp"
#include "i3d/ops.hpp"
#include "i3d/parallel.hpp"

namespace i3d {
namespace {

// Valid input range [lo, hi) covered by output index `o` along one axis.
struct Span {
  int64_t lo;
  int64_t hi;
};

Span window_span(const AxisPlan& p, int64_t o) {
  const int64_t start = o * p.stride - p.pad_lo;
  return {std::max<int64_t>(start, 0), std::min<int64_t>(start + p.kernel, p.in)};
}

std::array<AxisPlan, 3> pool_plans(const Shape& input, const PoolSpec& spec) {
  auto plans = plan_window(input, spec.window);
  for (int a = 0; a < 3; ++a) {
    for (int64_t o : {int64_t{0}, plans[a].out - 1}) {
      const Span s = window_span(plans[a], o);
      if (s.lo >= s.hi) {
        throw ConfigError("pool3d: window at output " + std::to_string(o) + " of axis " +
                          std::to_string(a) + " covers only padding");
      }
    }
  }
  return plans;
}

}  // namespace

Tensor pool3d_forward(const Tensor& input, const PoolSpec& spec) {
  const auto plans = pool_plans(input.shape(), spec);
  const auto& [at, ah, aw] = plans;
  const Shape& s = input.shape();
  const int64_t planes = s[0] * s[1];
  const int64_t in_plane = s[2] * s[3] * s[4];
  Tensor out({s[0], s[1], at.out, ah.out, aw.out});
  const int64_t out_plane = at.out * ah.out * aw.out;

  parallel_for(0, planes, [&](int64_t pl, int) {
    const float* in = input.ptr() + pl * in_plane;
    float* dst = out.ptr() + pl * out_plane;
    for (int64_t to = 0; to < at.out; ++to) {
      const Span st = window_span(at, to);
      for (int64_t ho = 0; ho < ah.out; ++ho) {
        const Span sh = window_span(ah, ho);
        for (int64_t wo = 0; wo < aw.out; ++wo) {
          const Span sw = window_span(aw, wo);
          float acc = spec.kind == PoolKind::kMax ? -std::numeric_limits<float>::infinity()
                                                  : 0.0f;
          for (int64_t t = st.lo; t < st.hi; ++t) {
            for (int64_t h = sh.lo; h < sh.hi; ++h) {
              const float* row = in + (t * s[3] + h) * s[4];
              for (int64_t w = sw.lo; w < sw.hi; ++w) {
                if (spec.kind == PoolKind::kMax) {
                  acc = std::max(acc, row[w]);
                } else {
                  acc += row[w];
                }
              }
            }
          }
          if (spec.kind == PoolKind::kAvg) {
            acc /= static_cast<float>((st.hi - st.lo) * (sh.hi - sh.lo) * (sw.hi - sw.lo));
          }
          *dst++ = acc;
        }
      }
    }
  });
  return out;
}

Tensor pool3d_backward(const Tensor& grad_out, const Tensor& input, const PoolSpec& spec) {
  const auto plans = pool_plans(input.shape(), spec);
  const auto& [at, ah, aw] = plans;
  const Shape& s = input.shape();
  const Shape expected{s[0], s[1], at.out, ah.out, aw.out};
  if (grad_out.shape() != expected) {
    throw ShapeError("pool3d_backward: grad_out " + shape_to_string(grad_out.shape()) +
                     " but forward output is " + shape_to_string(expected));
  }
  const int64_t planes = s[0] * s[1];
  const int64_t in_plane = s[2] * s[3] * s[4];
  const int64_t out_plane = at.out * ah.out * aw.out;
  Tensor grad_in(input.shape());

  parallel_for(0, planes, [&](int64_t pl, int) {
    const float* in = input.ptr() + pl * in_plane;
    const float* go = grad_out.ptr() + pl * out_plane;
    float* gi = grad_in.ptr() + pl * in_plane;
    for (int64_t to = 0; to < at.out; ++to) {
      const Span st = window_span(at, to);
      for (int64_t ho = 0; ho < ah.out; ++ho) {
        const Span sh = window_span(ah, ho);
        for (int64_t wo = 0; wo < aw.out; ++wo, ++go) {
          const Span sw = window_span(aw, wo);
          if (spec.kind == PoolKind::kMax) {
            int64_t best = -1;
            float best_v = -std::numeric_limits<float>::infinity();
            for (int64_t t = st.lo; t < st.hi; ++t) {
              for (int64_t h = sh.lo; h < sh.hi; ++h) {
                for (int64_t w = sw.lo; w < sw.hi; ++w) {
                  const int64_t idx = (t * s[3] + h) * s[4] + w;
                  if (best < 0 || in[idx] > best_v) {
                    best = idx;
                    best_v = in[idx];
                  }
                }
              }
            }
            gi[best] += *go;
          } else {
            const float share =
                *go / static_cast<float>((st.hi - st.lo) * (sh.hi - sh.lo) * (sw.hi - sw.lo));
            for (int64_t t = st.lo; t < st.hi; ++t) {
              for (int64_t h = sh.lo; h < sh.hi; ++h) {
                float* row = gi + (t * s[3] + h) * s[4];
                for (int64_t w = sw.lo; w < sw.hi; ++w) row[w] += share;
              }
            }
          }
        }
      }
    }
  });
  return grad_in;
}

}  // namespace i3d
