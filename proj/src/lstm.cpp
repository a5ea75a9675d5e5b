#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "i3d/error.hpp"
#include "i3d/ops.hpp"

namespace i3d {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapMat = Eigen::Map<RowMat>;

struct LstmCache {
  Mode mode = Mode::kTrain;
  int64_t n = 0, d = 0, t = 0, h = 0;
  RowMat x;              // (T*N, D), row = t*N + n
  RowMat xhat_ih;        // normalized input projection (T*N, 4H)
  Eigen::VectorXf invstd_ih;
  Eigen::VectorXf mean_ih, var_ih;
  std::vector<RowMat> hs;      // h_{-1} .. h_{T-1}, each (N, H)
  std::vector<RowMat> cs;      // c_{-1} .. c_{T-1}
  std::vector<RowMat> gates;   // activated (i, f, g, o) per step, (N, 4H)
  std::vector<RowMat> xhat_hh; // per step (N, 4H)
  std::vector<Eigen::VectorXf> invstd_hh, mean_hh, var_hh;
};

LstmParams LstmParams::zeros(int64_t input_size, int64_t hidden) {
  LstmParams p;
  const int64_t g = 4 * hidden;
  p.w_ih = Tensor({g, input_size});
  p.w_hh = Tensor({g, hidden});
  p.bias = Tensor({g});
  p.gamma_ih = Tensor({g});
  p.gamma_hh = Tensor({g});
  p.running_mean_ih = Tensor({g});
  p.running_var_ih = Tensor({g}, 1.0f);
  p.running_mean_hh = Tensor({g});
  p.running_var_hh = Tensor({g}, 1.0f);
  return p;
}

void LstmParams::validate() const {
  if (w_ih.rank() != 2 || w_hh.rank() != 2 || w_hh.dim(0) != 4 * w_hh.dim(1) ||
      w_ih.dim(0) != w_hh.dim(0)) {
    throw ShapeError("lstm: inconsistent weights " + shape_to_string(w_ih.shape()) + " / " +
                     shape_to_string(w_hh.shape()));
  }
  const int64_t g = w_hh.dim(0);
  for (const Tensor* v : {&bias, &gamma_ih, &gamma_hh, &running_mean_ih, &running_var_ih,
                          &running_mean_hh, &running_var_hh}) {
    if (v->numel() != g) throw ShapeError("lstm: gate vector length must be 4*hidden");
  }
}

namespace {

float sigmoid(float v) { return 1.0f / (1.0f + std::exp(-v)); }

// Column statistics of `z`; returns normalized values and fills mean/var/invstd.
RowMat normalize_columns(const RowMat& z, float eps, Eigen::VectorXf& mean, Eigen::VectorXf& var,
                         Eigen::VectorXf& invstd) {
  const auto rows = static_cast<double>(z.rows());
  mean.resize(z.cols());
  var.resize(z.cols());
  invstd.resize(z.cols());
  RowMat out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) s += z(r, j);
    const double m = s / rows;
    double ss = 0.0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) ss += (z(r, j) - m) * (z(r, j) - m);
    mean[j] = static_cast<float>(m);
    var[j] = static_cast<float>(ss / rows);
    invstd[j] = static_cast<float>(1.0 / std::sqrt(ss / rows + eps));
    for (Eigen::Index r = 0; r < z.rows(); ++r) out(r, j) = static_cast<float>((z(r, j) - m) * invstd[j]);
  }
  return out;
}

RowMat normalize_with(const RowMat& z, const Tensor& mean, const Tensor& var, float eps,
                      Eigen::VectorXf& invstd) {
  invstd.resize(z.cols());
  RowMat out(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    invstd[j] = 1.0f / std::sqrt(var[j] + eps);
    for (Eigen::Index r = 0; r < z.rows(); ++r) out(r, j) = (z(r, j) - mean[j]) * invstd[j];
  }
  return out;
}

// Adjoint of column normalization given the upstream gradient on xhat.
RowMat normalize_backward(const RowMat& dxhat, const RowMat& xhat, const Eigen::VectorXf& invstd,
                          Mode mode) {
  RowMat dz(dxhat.rows(), dxhat.cols());
  const auto rows = static_cast<double>(dxhat.rows());
  for (Eigen::Index j = 0; j < dxhat.cols(); ++j) {
    if (mode == Mode::kInfer) {
      dz.col(j) = dxhat.col(j) * invstd[j];
      continue;
    }
    double s = 0.0, sx = 0.0;
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      s += dxhat(r, j);
      sx += double(dxhat(r, j)) * xhat(r, j);
    }
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
      dz(r, j) = static_cast<float>(invstd[j] * (dxhat(r, j) - s / rows - xhat(r, j) * sx / rows));
    }
  }
  return dz;
}

}  // namespace

LstmResult lstm_forward(const Tensor& x, const LstmParams& params, Mode mode, const Tensor* h0,
                        const Tensor* c0) {
  params.validate();
  if (x.rank() != 3) {
    throw ShapeError("lstm: input must be (N, D, T), got " + shape_to_string(x.shape()));
  }
  const int64_t n = x.dim(0), d = x.dim(1), t_len = x.dim(2), h = params.hidden();
  if (t_len == 0) throw ConfigError("lstm: sequence length 0");
  if (d != params.input_size()) {
    throw ShapeError("lstm: input " + shape_to_string(x.shape()) + " but w_ih " +
                     shape_to_string(params.w_ih.shape()));
  }
  x.require_finite("lstm input");

  auto cache = std::make_shared<LstmCache>();
  LstmCache& k = *cache;
  k.mode = mode;
  k.n = n;
  k.d = d;
  k.t = t_len;
  k.h = h;
  k.x.resize(t_len * n, d);
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t j = 0; j < d; ++j) {
      for (int64_t s = 0; s < t_len; ++s) k.x(s * n + b, j) = x[(b * d + j) * t_len + s];
    }
  }

  const MapConstMat w_ih(params.w_ih.ptr(), 4 * h, d);
  const MapConstMat w_hh(params.w_hh.ptr(), 4 * h, h);
  const RowMat z_ih = k.x * w_ih.transpose();
  if (mode == Mode::kTrain) {
    k.xhat_ih = normalize_columns(z_ih, params.epsilon, k.mean_ih, k.var_ih, k.invstd_ih);
  } else {
    k.xhat_ih = normalize_with(z_ih, params.running_mean_ih, params.running_var_ih,
                               params.epsilon, k.invstd_ih);
  }

  auto state0 = [&](const Tensor* s, const char* name) {
    RowMat m = RowMat::Zero(n, h);
    if (s) {
      if (s->numel() != n * h) {
        throw ShapeError(std::string("lstm: initial ") + name + " " + shape_to_string(s->shape()));
      }
      m = MapConstMat(s->ptr(), n, h);
    }
    return m;
  };
  k.hs.push_back(state0(h0, "h"));
  k.cs.push_back(state0(c0, "c"));

  LstmResult result{Tensor({n, h, t_len}), Tensor({n, h, t_len}), nullptr};
  for (int64_t s = 0; s < t_len; ++s) {
    const RowMat z_hh = k.hs.back() * w_hh.transpose();
    Eigen::VectorXf mean, var, invstd;
    RowMat xhat_hh;
    if (mode == Mode::kTrain) {
      xhat_hh = normalize_columns(z_hh, params.epsilon, mean, var, invstd);
    } else {
      xhat_hh = normalize_with(z_hh, params.running_mean_hh, params.running_var_hh,
                               params.epsilon, invstd);
    }
    RowMat act(n, 4 * h);
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t j = 0; j < 4 * h; ++j) {
        act(b, j) = params.gamma_ih[j] * k.xhat_ih(s * n + b, j) +
                    params.gamma_hh[j] * xhat_hh(b, j) + params.bias[j];
      }
    }
    RowMat hn(n, h), cn(n, h);
    const RowMat& cp = k.cs.back();
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t j = 0; j < h; ++j) {
        const float i_g = sigmoid(act(b, j));
        const float f_g = sigmoid(act(b, h + j));
        const float g_g = std::tanh(act(b, 2 * h + j));
        const float o_g = sigmoid(act(b, 3 * h + j));
        act(b, j) = i_g;
        act(b, h + j) = f_g;
        act(b, 2 * h + j) = g_g;
        act(b, 3 * h + j) = o_g;
        cn(b, j) = f_g * cp(b, j) + i_g * g_g;
        hn(b, j) = o_g * std::tanh(cn(b, j));
        result.h[(b * h + j) * t_len + s] = hn(b, j);
        result.c[(b * h + j) * t_len + s] = cn(b, j);
      }
    }
    k.gates.push_back(std::move(act));
    k.xhat_hh.push_back(std::move(xhat_hh));
    k.invstd_hh.push_back(invstd);
    k.mean_hh.push_back(mean);
    k.var_hh.push_back(var);
    k.hs.push_back(std::move(hn));
    k.cs.push_back(std::move(cn));
  }
  result.h.require_finite("lstm hidden state");
  result.cache = cache;
  return result;
}

void lstm_update_running_stats(LstmParams& params, const LstmResult& result) {
  const LstmCache& k = *result.cache;
  if (k.mode != Mode::kTrain) return;
  const float d = params.decay;
  const int64_t g = 4 * k.h;
  for (int64_t j = 0; j < g; ++j) {
    params.running_mean_ih[j] = d * params.running_mean_ih[j] + (1 - d) * k.mean_ih[j];
    params.running_var_ih[j] = d * params.running_var_ih[j] + (1 - d) * k.var_ih[j];
    double m = 0.0, v = 0.0;
    for (int64_t s = 0; s < k.t; ++s) {
      m += k.mean_hh[static_cast<size_t>(s)][j];
      v += k.var_hh[static_cast<size_t>(s)][j];
    }
    params.running_mean_hh[j] = d * params.running_mean_hh[j] + (1 - d) * static_cast<float>(m / k.t);
    params.running_var_hh[j] = d * params.running_var_hh[j] + (1 - d) * static_cast<float>(v / k.t);
  }
}

LstmGrads lstm_backward(const Tensor& grad_h, const LstmParams& params, const LstmResult& forward,
                        const Tensor* grad_c_last) {
  const LstmCache& k = *forward.cache;
  const int64_t n = k.n, h = k.h, t_len = k.t, d = k.d;
  if (grad_h.shape() != Shape{n, h, t_len}) {
    throw ShapeError("lstm_backward: grad " + shape_to_string(grad_h.shape()) +
                     " vs hidden sequence " + shape_to_string({n, h, t_len}));
  }
  const MapConstMat w_ih(params.w_ih.ptr(), 4 * h, d);
  const MapConstMat w_hh(params.w_hh.ptr(), 4 * h, h);

  LstmGrads g;
  g.w_ih = Tensor(params.w_ih.shape());
  g.w_hh = Tensor(params.w_hh.shape());
  g.bias = Tensor(params.bias.shape());
  g.gamma_ih = Tensor(params.gamma_ih.shape());
  g.gamma_hh = Tensor(params.gamma_hh.shape());
  MapMat dw_hh(g.w_hh.ptr(), 4 * h, h);

  RowMat dh_next = RowMat::Zero(n, h);
  RowMat dc_next = RowMat::Zero(n, h);
  if (grad_c_last) dc_next = MapConstMat(grad_c_last->ptr(), n, h);
  RowMat d_act_ih(t_len * n, 4 * h);

  for (int64_t s = t_len - 1; s >= 0; --s) {
    const auto si = static_cast<size_t>(s);
    const RowMat& gates = k.gates[si];
    const RowMat& c_prev = k.cs[si];
    const RowMat& c_cur = k.cs[si + 1];
    RowMat da(n, 4 * h);
    RowMat dc_prev(n, h);
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t j = 0; j < h; ++j) {
        const float i_g = gates(b, j), f_g = gates(b, h + j);
        const float g_g = gates(b, 2 * h + j), o_g = gates(b, 3 * h + j);
        const float tc = std::tanh(c_cur(b, j));
        const float dh = grad_h[(b * h + j) * t_len + s] + dh_next(b, j);
        const float dc = dc_next(b, j) + dh * o_g * (1.0f - tc * tc);
        da(b, j) = dc * g_g * i_g * (1.0f - i_g);
        da(b, h + j) = dc * c_prev(b, j) * f_g * (1.0f - f_g);
        da(b, 2 * h + j) = dc * i_g * (1.0f - g_g * g_g);
        da(b, 3 * h + j) = dh * tc * o_g * (1.0f - o_g);
        dc_prev(b, j) = dc * f_g;
      }
    }
    RowMat dxhat_hh(n, 4 * h);
    const RowMat& xhat_hh = k.xhat_hh[si];
    for (int64_t j = 0; j < 4 * h; ++j) {
      double sb = 0.0, sg = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        sb += da(b, j);
        sg += double(da(b, j)) * xhat_hh(b, j);
        dxhat_hh(b, j) = da(b, j) * params.gamma_hh[j];
        d_act_ih(s * n + b, j) = da(b, j);
      }
      g.bias[j] += static_cast<float>(sb);
      g.gamma_hh[j] += static_cast<float>(sg);
    }
    const RowMat dz_hh = normalize_backward(dxhat_hh, xhat_hh, k.invstd_hh[si], k.mode);
    dw_hh.noalias() += dz_hh.transpose() * k.hs[si];
    dh_next = dz_hh * w_hh;
    dc_next = dc_prev;
  }

  RowMat dxhat_ih(t_len * n, 4 * h);
  for (int64_t j = 0; j < 4 * h; ++j) {
    double sg = 0.0;
    for (int64_t r = 0; r < t_len * n; ++r) {
      sg += double(d_act_ih(r, j)) * k.xhat_ih(r, j);
      dxhat_ih(r, j) = d_act_ih(r, j) * params.gamma_ih[j];
    }
    g.gamma_ih[j] = static_cast<float>(sg);
  }
  const RowMat dz_ih = normalize_backward(dxhat_ih, k.xhat_ih, k.invstd_ih, k.mode);
  MapMat(g.w_ih.ptr(), 4 * h, d).noalias() = dz_ih.transpose() * k.x;
  const RowMat dx = dz_ih * w_ih;
  g.input = Tensor({n, d, t_len});
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t j = 0; j < d; ++j) {
      for (int64_t s = 0; s < t_len; ++s) g.input[(b * d + j) * t_len + s] = dx(s * n + b, j);
    }
  }
  g.h0 = Tensor({n, h});
  g.c0 = Tensor({n, h});
  MapMat(g.h0.ptr(), n, h) = dh_next;
  MapMat(g.c0.ptr(), n, h) = dc_next;
  return g;
}

LstmStep lstm_cell_bn(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                      const LstmParams& params) {
  if (x_t.rank() != 2) {
    throw ShapeError("lstm_cell_bn: x_t must be (N, D), got " + shape_to_string(x_t.shape()));
  }
  const int64_t n = x_t.dim(0);
  LstmResult r = lstm_forward(x_t.reshaped({n, x_t.dim(1), 1}), params, Mode::kTrain, &h_prev,
                              &c_prev);
  const int64_t h = params.hidden();
  return {std::move(r.h).reshaped({n, h}), std::move(r.c).reshaped({n, h})};
}

}  // namespace i3d
