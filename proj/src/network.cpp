#include "i3d/network.hpp"

#include <cmath>
#include <random>
#include <string>

#include "i3d/error.hpp"

namespace i3d {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void fill_normal(Tensor& t, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
}

}  // namespace

Checkpoint init_weights(const GraphSpec& graph, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Checkpoint ckpt;
  ckpt.family = graph.family;
  constexpr double kClassifierStd = 0.01;
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerNode& n = graph.node(static_cast<int>(i));
    for (const ParamSpec& p : graph.node_params(static_cast<int>(i))) {
      Tensor t(p.shape);
      const std::string& name = p.name;
      if (n.kind == NodeKind::kConv || n.kind == NodeKind::kLinear) {
        if (ends_with(name, "/weight")) {
          const double fan_in = static_cast<double>(t.numel() / p.shape[0]);
          double std = std::sqrt(2.0 / fan_in);
          if (n.classifier) std = kClassifierStd;
          if (n.init_std > 0.0f) std = n.init_std;
          fill_normal(t, std, rng);
        }
      } else if (n.kind == NodeKind::kBatchNorm) {
        if (ends_with(name, "/gamma") || ends_with(name, "/running_var")) t.fill(1.0f);
      } else if (n.kind == NodeKind::kLstm) {
        const int64_t h = n.units;
        if (ends_with(name, "/w_ih") || ends_with(name, "/w_hh")) {
          fill_normal(t, 1.0 / std::sqrt(static_cast<double>(p.shape[1])), rng);
        } else if (ends_with(name, "/gamma_ih") || ends_with(name, "/gamma_hh")) {
          t.fill(0.1f);
        } else if (ends_with(name, "/bias")) {
          for (int64_t j = h; j < 2 * h; ++j) t[j] = 1.0f;
        } else if (ends_with(name, "_var_ih") || ends_with(name, "_var_hh")) {
          t.fill(1.0f);
        }
      }
      ckpt.add(name, std::move(t));
    }
  }
  return ckpt;
}

void check_weights(const GraphSpec& graph, const Checkpoint& weights) {
  for (const ParamSpec& p : graph.params()) {
    if (!weights.contains(p.name)) throw ConfigError("missing weight tensor '" + p.name + "'");
    const Tensor& t = weights.get(p.name);
    if (t.shape() != p.shape) {
      throw ShapeError("weight tensor '" + p.name + "' has shape " + shape_to_string(t.shape()) +
                       ", graph expects " + shape_to_string(p.shape));
    }
  }
}

namespace {

BatchNormState bn_state(const Checkpoint& w, const std::string& id) {
  BatchNormState s;
  s.gamma = w.get(id + "/gamma");
  s.beta = w.get(id + "/beta");
  s.running_mean = w.get(id + "/running_mean");
  s.running_var = w.get(id + "/running_var");
  return s;
}

LstmParams lstm_params(const Checkpoint& w, const std::string& id) {
  LstmParams p;
  p.w_ih = w.get(id + "/w_ih");
  p.w_hh = w.get(id + "/w_hh");
  p.bias = w.get(id + "/bias");
  p.gamma_ih = w.get(id + "/gamma_ih");
  p.gamma_hh = w.get(id + "/gamma_hh");
  p.running_mean_ih = w.get(id + "/running_mean_ih");
  p.running_var_ih = w.get(id + "/running_var_ih");
  p.running_mean_hh = w.get(id + "/running_mean_hh");
  p.running_var_hh = w.get(id + "/running_var_hh");
  return p;
}

// (N, C, T, H, W) -> (N*T, C*H*W), rows ordered (n, t).
Tensor to_step_rows(const Tensor& x) {
  const int64_t n = x.dim(0), c = x.dim(1), t = x.dim(2), hw = x.dim(3) * x.dim(4);
  Tensor rows({n * t, c * hw});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t s = 0; s < t; ++s) {
        const float* src = x.ptr() + ((b * c + ch) * t + s) * hw;
        float* dst = rows.ptr() + (b * t + s) * c * hw + ch * hw;
        std::copy(src, src + hw, dst);
      }
  return rows;
}

Tensor from_step_rows(const Tensor& rows, const Shape& shape) {
  const int64_t n = shape[0], c = shape[1], t = shape[2], hw = shape[3] * shape[4];
  Tensor x(shape);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t s = 0; s < t; ++s) {
        const float* src = rows.ptr() + (b * t + s) * c * hw + ch * hw;
        std::copy(src, src + hw, x.ptr() + ((b * c + ch) * t + s) * hw);
      }
  return x;
}

Tensor channel_softmax(const Tensor& x) {
  const int64_t n = x.dim(0), c = x.dim(1), inner = x.numel() / (n * c);
  x.require_finite("softmax input");
  Tensor p(x.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < inner; ++i) {
      const float* z = x.ptr() + b * c * inner + i;
      float* q = p.ptr() + b * c * inner + i;
      float mx = z[0];
      for (int64_t k = 1; k < c; ++k) mx = std::max(mx, z[k * inner]);
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) s += std::exp(double(z[k * inner]) - mx);
      for (int64_t k = 0; k < c; ++k) {
        q[k * inner] = static_cast<float>(std::exp(double(z[k * inner]) - mx) / s);
      }
    }
  return p;
}

Tensor channel_softmax_backward(const Tensor& g, const Tensor& p) {
  const int64_t n = p.dim(0), c = p.dim(1), inner = p.numel() / (n * c);
  Tensor dx(p.shape());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = b * c * inner + i;
      double s = 0.0;
      for (int64_t k = 0; k < c; ++k) s += double(p[base + k * inner]) * g[base + k * inner];
      for (int64_t k = 0; k < c; ++k) {
        const int64_t j = base + k * inner;
        dx[j] = static_cast<float>(p[j] * (g[j] - s));
      }
    }
  return dx;
}

Tensor temporal_mean(const Tensor& x) {
  const int64_t n = x.dim(0), c = x.dim(1), t = x.dim(2), hw = x.dim(3) * x.dim(4);
  Tensor y({n, c, 1, x.dim(3), x.dim(4)});
  for (int64_t nc = 0; nc < n * c; ++nc)
    for (int64_t i = 0; i < hw; ++i) {
      double s = 0.0;
      for (int64_t k = 0; k < t; ++k) s += x[(nc * t + k) * hw + i];
      y[nc * hw + i] = static_cast<float>(s / t);
    }
  return y;
}

Tensor temporal_mean_backward(const Tensor& g, const Shape& in) {
  const int64_t t = in[2], hw = in[3] * in[4], nc = in[0] * in[1];
  Tensor dx(in);
  const float inv = 1.0f / static_cast<float>(t);
  for (int64_t a = 0; a < nc; ++a)
    for (int64_t k = 0; k < t; ++k)
      for (int64_t i = 0; i < hw; ++i) dx[(a * t + k) * hw + i] = g[a * hw + i] * inv;
  return dx;
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  Shape s = parts[0]->shape();
  s[1] = 0;
  for (const Tensor* p : parts) s[1] += p->dim(1);
  Tensor y(s);
  const int64_t n = s[0], inner = s[2] * s[3] * s[4];
  int64_t offset = 0;
  for (const Tensor* p : parts) {
    const int64_t c = p->dim(1);
    for (int64_t b = 0; b < n; ++b) {
      std::copy(p->ptr() + b * c * inner, p->ptr() + (b + 1) * c * inner,
                y.ptr() + (b * s[1] + offset) * inner);
    }
    offset += c;
  }
  return y;
}

void add_into(Tensor& acc, const Tensor& g, float scale = 1.0f) {
  if (acc.empty()) {
    acc = g;
    if (scale != 1.0f) {
      for (auto& v : acc.data()) v *= scale;
    }
    return;
  }
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += scale * g[i];
}

void check_input(const LayerNode& n, const Tensor& x) {
  if (x.rank() != 5 || x.dim(1) != n.shape[0] || x.dim(3) != n.shape[2] ||
      x.dim(4) != n.shape[3] || x.dim(0) < 1 || x.dim(2) < 1) {
    throw ShapeError("input '" + n.id + "' expects (N, " + std::to_string(n.shape[0]) + ", T, " +
                     std::to_string(n.shape[2]) + ", " + std::to_string(n.shape[3]) + "), got " +
                     shape_to_string(x.shape()));
  }
}

}  // namespace

ForwardPass forward(const GraphSpec& graph, const Checkpoint& weights,
                    const std::vector<Tensor>& inputs, Mode mode) {
  if (inputs.size() != graph.inputs().size()) {
    throw ShapeError("graph takes " + std::to_string(graph.inputs().size()) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  ForwardPass pass;
  pass.mode = mode;
  pass.inputs = inputs;
  pass.outputs.resize(graph.size());
  pass.batchnorm.resize(graph.size());
  pass.lstm.resize(graph.size());
  size_t next_input = 0;
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerNode& n = graph.node(static_cast<int>(i));
    auto in = [&](size_t k) -> const Tensor& {
      return pass.outputs[static_cast<size_t>(n.inputs[k])];
    };
    Tensor& out = pass.outputs[i];
    switch (n.kind) {
      case NodeKind::kInput:
        check_input(n, inputs[next_input]);
        out = inputs[next_input++];
        break;
      case NodeKind::kConv: {
        const Tensor* bias = n.window.use_bias ? &weights.get(n.id + "/bias") : nullptr;
        out = conv3d_forward(in(0), weights.get(n.id + "/weight"), n.window, bias);
        break;
      }
      case NodeKind::kPool:
        out = pool3d_forward(in(0), PoolSpec{n.pool, n.window});
        break;
      case NodeKind::kBatchNorm:
        pass.batchnorm[i] = batchnorm_forward(in(0), bn_state(weights, n.id), mode);
        out = std::move(pass.batchnorm[i].output);
        pass.batchnorm[i].output = Tensor();
        break;
      case NodeKind::kRelu:
        out = relu_forward(in(0));
        break;
      case NodeKind::kLinear: {
        const Tensor& x = in(0);
        const Tensor y = linear_forward(to_step_rows(x), weights.get(n.id + "/weight"),
                                        &weights.get(n.id + "/bias"));
        out = from_step_rows(y, {x.dim(0), n.units, x.dim(2), 1, 1});
        break;
      }
      case NodeKind::kLstm: {
        const Tensor& x = in(0);
        const Tensor seq = x.reshaped({x.dim(0), x.dim(1), x.dim(2)});
        pass.lstm[i] = lstm_forward(seq, lstm_params(weights, n.id), mode);
        out = pass.lstm[i].h.reshaped({x.dim(0), n.units, x.dim(2), 1, 1});
        break;
      }
      case NodeKind::kConcat: {
        std::vector<const Tensor*> parts;
        for (size_t k = 0; k < n.inputs.size(); ++k) parts.push_back(&in(k));
        out = concat_channels(parts);
        break;
      }
      case NodeKind::kAdd:
      case NodeKind::kAverage: {
        out = in(0);
        for (size_t k = 1; k < n.inputs.size(); ++k) {
          if (in(k).shape() != out.shape()) {
            throw ShapeError("layer '" + n.id + "': operand shapes differ at run time");
          }
          add_into(out, in(k));
        }
        if (n.kind == NodeKind::kAverage) {
          const float inv = 1.0f / static_cast<float>(n.inputs.size());
          for (auto& v : out.data()) v *= inv;
        }
        break;
      }
      case NodeKind::kTemporalMean:
        out = temporal_mean(in(0));
        break;
      case NodeKind::kSoftmax:
        out = channel_softmax(in(0));
        break;
    }
  }
  return pass;
}

FullGradients backward_full(const GraphSpec& graph, const Checkpoint& weights,
                            const ForwardPass& pass, const Tensor& grad_output) {
  if (grad_output.shape() != pass.output(graph).shape()) {
    throw ShapeError("output gradient " + shape_to_string(grad_output.shape()) +
                     " does not match output " + shape_to_string(pass.output(graph).shape()));
  }
  std::vector<Tensor> grads(graph.size());
  grads[static_cast<size_t>(graph.output())] = grad_output;
  FullGradients result;
  result.params.family = graph.family;
  std::vector<std::pair<std::string, Tensor>> collected;

  for (size_t idx = graph.size(); idx-- > 0;) {
    const LayerNode& n = graph.node(static_cast<int>(idx));
    Tensor& g = grads[idx];
    if (g.empty()) continue;
    auto in = [&](size_t k) -> const Tensor& {
      return pass.outputs[static_cast<size_t>(n.inputs[k])];
    };
    auto send = [&](size_t k, const Tensor& d, float scale = 1.0f) {
      add_into(grads[static_cast<size_t>(n.inputs[k])], d, scale);
    };
    switch (n.kind) {
      case NodeKind::kInput:
        break;
      case NodeKind::kConv: {
        ConvGrads cg = conv3d_backward(g, in(0), weights.get(n.id + "/weight"), n.window);
        send(0, cg.input);
        if (n.window.use_bias) collected.emplace_back(n.id + "/bias", std::move(cg.bias));
        collected.emplace_back(n.id + "/weight", std::move(cg.kernel));
        break;
      }
      case NodeKind::kPool:
        send(0, pool3d_backward(g, in(0), PoolSpec{n.pool, n.window}));
        break;
      case NodeKind::kBatchNorm: {
        BatchNormGrads bg = batchnorm_backward(g, in(0), bn_state(weights, n.id),
                                               pass.batchnorm[idx], pass.mode);
        send(0, bg.input);
        collected.emplace_back(n.id + "/beta", std::move(bg.beta));
        collected.emplace_back(n.id + "/gamma", std::move(bg.gamma));
        break;
      }
      case NodeKind::kRelu:
        send(0, relu_backward(g, pass.outputs[idx]));
        break;
      case NodeKind::kLinear: {
        const Tensor& x = in(0);
        const Tensor gy = to_step_rows(g);
        LinearGrads lg = linear_backward(gy, to_step_rows(x), weights.get(n.id + "/weight"));
        send(0, from_step_rows(lg.input, x.shape()));
        collected.emplace_back(n.id + "/bias", std::move(lg.bias));
        collected.emplace_back(n.id + "/weight", std::move(lg.weight));
        break;
      }
      case NodeKind::kLstm: {
        const Tensor& x = in(0);
        const Tensor gh = g.reshaped({g.dim(0), g.dim(1), g.dim(2)});
        LstmGrads lg = lstm_backward(gh, lstm_params(weights, n.id), pass.lstm[idx]);
        send(0, lg.input.reshaped(x.shape()));
        collected.emplace_back(n.id + "/gamma_hh", std::move(lg.gamma_hh));
        collected.emplace_back(n.id + "/gamma_ih", std::move(lg.gamma_ih));
        collected.emplace_back(n.id + "/bias", std::move(lg.bias));
        collected.emplace_back(n.id + "/w_hh", std::move(lg.w_hh));
        collected.emplace_back(n.id + "/w_ih", std::move(lg.w_ih));
        break;
      }
      case NodeKind::kConcat: {
        const int64_t batch = g.dim(0), c_total = g.dim(1);
        const int64_t inner = g.numel() / (batch * c_total);
        int64_t offset = 0;
        for (size_t k = 0; k < n.inputs.size(); ++k) {
          Tensor part(in(k).shape());
          const int64_t c = part.dim(1);
          for (int64_t b = 0; b < batch; ++b) {
            const float* src = g.ptr() + (b * c_total + offset) * inner;
            std::copy(src, src + c * inner, part.ptr() + b * c * inner);
          }
          send(k, part);
          offset += c;
        }
        break;
      }
      case NodeKind::kAdd:
      case NodeKind::kAverage: {
        const float scale =
            n.kind == NodeKind::kAverage ? 1.0f / static_cast<float>(n.inputs.size()) : 1.0f;
        for (size_t k = 0; k < n.inputs.size(); ++k) send(k, g, scale);
        break;
      }
      case NodeKind::kTemporalMean:
        send(0, temporal_mean_backward(g, in(0).shape()));
        break;
      case NodeKind::kSoftmax:
        send(0, channel_softmax_backward(g, pass.outputs[idx]));
        break;
    }
    if (n.kind != NodeKind::kInput) g = Tensor();
  }

  // Report gradients in parameter order.
  std::unordered_map<std::string, size_t> where;
  for (size_t i = 0; i < collected.size(); ++i) where[collected[i].first] = i;
  for (const ParamSpec& p : graph.params()) {
    if (!p.trainable) continue;
    auto it = where.find(p.name);
    result.params.add(p.name, it == where.end() ? Tensor(p.shape)
                                                : std::move(collected[it->second].second));
  }
  for (int in : graph.inputs()) {
    Tensor& g = grads[static_cast<size_t>(in)];
    result.inputs.push_back(g.empty() ? Tensor(pass.outputs[static_cast<size_t>(in)].shape())
                                      : std::move(g));
  }
  return result;
}

Checkpoint backward(const GraphSpec& graph, const Checkpoint& weights, const ForwardPass& pass,
                    const Tensor& grad_output) {
  return backward_full(graph, weights, pass, grad_output).params;
}

void update_running_stats(const GraphSpec& graph, Checkpoint& weights, const ForwardPass& pass) {
  if (pass.mode != Mode::kTrain) return;
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerNode& n = graph.node(static_cast<int>(i));
    if (n.kind == NodeKind::kBatchNorm) {
      BatchNormState s = bn_state(weights, n.id);
      update_running_stats(s, pass.batchnorm[i]);
      weights.set(n.id + "/running_mean", std::move(s.running_mean));
      weights.set(n.id + "/running_var", std::move(s.running_var));
    } else if (n.kind == NodeKind::kLstm) {
      LstmParams p = lstm_params(weights, n.id);
      lstm_update_running_stats(p, pass.lstm[i]);
      weights.set(n.id + "/running_mean_ih", std::move(p.running_mean_ih));
      weights.set(n.id + "/running_var_ih", std::move(p.running_var_ih));
      weights.set(n.id + "/running_mean_hh", std::move(p.running_mean_hh));
      weights.set(n.id + "/running_var_hh", std::move(p.running_var_hh));
    }
  }
}

void calibrate_batchnorm(const GraphSpec& graph, Checkpoint& weights,
                         const std::vector<Tensor>& inputs) {
  const ForwardPass pass = forward(graph, weights, inputs, Mode::kTrain);
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerNode& n = graph.node(static_cast<int>(i));
    if (n.kind == NodeKind::kBatchNorm) {
      const auto& r = pass.batchnorm[i];
      weights.set(n.id + "/running_mean",
                  Tensor({static_cast<int64_t>(r.mean.size())}, r.mean));
      weights.set(n.id + "/running_var", Tensor({static_cast<int64_t>(r.var.size())}, r.var));
    } else if (n.kind == NodeKind::kLstm) {
      LstmParams p = lstm_params(weights, n.id);
      p.decay = 0.0f;
      lstm_update_running_stats(p, pass.lstm[i]);
      weights.set(n.id + "/running_mean_ih", std::move(p.running_mean_ih));
      weights.set(n.id + "/running_var_ih", std::move(p.running_var_ih));
      weights.set(n.id + "/running_mean_hh", std::move(p.running_mean_hh));
      weights.set(n.id + "/running_var_hh", std::move(p.running_var_hh));
    }
  }
}

}  // namespace i3d
