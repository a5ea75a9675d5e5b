#include <cmath>
#include <string>

#include "i3d/error.hpp"
#include "i3d/ops.hpp"
#include "i3d/parallel.hpp"

namespace i3d {

BatchNormState BatchNormState::identity(int64_t channels) {
  BatchNormState s;
  s.gamma = Tensor({channels}, 1.0f);
  s.beta = Tensor({channels}, 0.0f);
  s.running_mean = Tensor({channels}, 0.0f);
  s.running_var = Tensor({channels}, 1.0f);
  return s;
}

void BatchNormState::validate() const {
  const int64_t c = gamma.numel();
  if (beta.numel() != c || running_mean.numel() != c || running_var.numel() != c) {
    throw ShapeError("batchnorm: parameter vectors disagree on channel count");
  }
  for (int64_t i = 0; i < c; ++i) {
    if (!(running_var[i] >= 0.0f)) throw NumericError("batchnorm: negative running variance");
  }
}

namespace {

struct Layout {
  int64_t n, c, inner;
};

Layout layout_of(const Tensor& x, const BatchNormState& state) {
  if (x.rank() < 2) {
    throw ShapeError("batchnorm: input needs a channel axis, got " + shape_to_string(x.shape()));
  }
  state.validate();
  if (x.dim(1) != state.channels()) {
    throw ShapeError("batchnorm: input " + shape_to_string(x.shape()) + " has " +
                     std::to_string(x.dim(1)) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  return {x.dim(0), x.dim(1), x.numel() / (x.dim(0) * x.dim(1))};
}

}  // namespace

BatchNormResult batchnorm_forward(const Tensor& input, const BatchNormState& state, Mode mode) {
  const Layout l = layout_of(input, state);
  BatchNormResult r{Tensor(input.shape()), std::vector<float>(l.c), std::vector<float>(l.c)};
  const double count = static_cast<double>(l.n * l.inner);

  parallel_for(0, l.c, [&](int64_t c, int) {
    double mean, var;
    if (mode == Mode::kTrain) {
      double s = 0.0;
      for (int64_t n = 0; n < l.n; ++n) {
        const float* p = input.ptr() + (n * l.c + c) * l.inner;
        for (int64_t i = 0; i < l.inner; ++i) s += p[i];
      }
      mean = s / count;
      double ss = 0.0;
      for (int64_t n = 0; n < l.n; ++n) {
        const float* p = input.ptr() + (n * l.c + c) * l.inner;
        for (int64_t i = 0; i < l.inner; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / count;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    r.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    r.var[static_cast<size_t>(c)] = static_cast<float>(var);
    const float scale = static_cast<float>(state.gamma[c] / std::sqrt(var + state.epsilon));
    const float shift = static_cast<float>(state.beta[c] - mean * scale);
    for (int64_t n = 0; n < l.n; ++n) {
      const float* p = input.ptr() + (n * l.c + c) * l.inner;
      float* q = r.output.ptr() + (n * l.c + c) * l.inner;
      for (int64_t i = 0; i < l.inner; ++i) q[i] = p[i] * scale + shift;
    }
  });
  r.output.require_finite("batchnorm output");
  return r;
}

void update_running_stats(BatchNormState& state, const BatchNormResult& batch) {
  const int64_t c = state.channels();
  if (static_cast<int64_t>(batch.mean.size()) != c) {
    throw ShapeError("update_running_stats: channel mismatch");
  }
  const float d = state.decay;
  for (int64_t i = 0; i < c; ++i) {
    state.running_mean[i] = d * state.running_mean[i] + (1.0f - d) * batch.mean[static_cast<size_t>(i)];
    state.running_var[i] = d * state.running_var[i] + (1.0f - d) * batch.var[static_cast<size_t>(i)];
  }
}

BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& input,
                                  const BatchNormState& state, const BatchNormResult& forward,
                                  Mode mode) {
  const Layout l = layout_of(input, state);
  if (grad_out.shape() != input.shape()) {
    throw ShapeError("batchnorm_backward: grad " + shape_to_string(grad_out.shape()) +
                     " vs input " + shape_to_string(input.shape()));
  }
  BatchNormGrads g{Tensor(input.shape()), Tensor({l.c}), Tensor({l.c})};
  const double count = static_cast<double>(l.n * l.inner);

  parallel_for(0, l.c, [&](int64_t c, int) {
    const double mean = forward.mean[static_cast<size_t>(c)];
    const double invstd = 1.0 / std::sqrt(double(forward.var[static_cast<size_t>(c)]) + state.epsilon);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t n = 0; n < l.n; ++n) {
      const float* x = input.ptr() + (n * l.c + c) * l.inner;
      const float* dy = grad_out.ptr() + (n * l.c + c) * l.inner;
      for (int64_t i = 0; i < l.inner; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mean) * invstd;
      }
    }
    g.beta[c] = static_cast<float>(sum_dy);
    g.gamma[c] = static_cast<float>(sum_dy_xhat);
    const double gamma = state.gamma[c];
    for (int64_t n = 0; n < l.n; ++n) {
      const float* x = input.ptr() + (n * l.c + c) * l.inner;
      const float* dy = grad_out.ptr() + (n * l.c + c) * l.inner;
      float* dx = g.input.ptr() + (n * l.c + c) * l.inner;
      for (int64_t i = 0; i < l.inner; ++i) {
        if (mode == Mode::kTrain) {
          const double xhat = (x[i] - mean) * invstd;
          dx[i] = static_cast<float>(gamma * invstd *
                                     (dy[i] - sum_dy / count - xhat * sum_dy_xhat / count));
        } else {
          dx[i] = static_cast<float>(gamma * invstd * dy[i]);
        }
      }
    }
  });
  return g;
}

}  // namespace i3d
