#include "i3d/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "i3d/error.hpp"
#include "i3d/network.hpp"

namespace i3d {
namespace {

bool fixed_length_inputs(const GraphSpec& graph) {
  return graph.family == "two_stream" || graph.family == "fused_3d";
}

// `count` frame indices spread evenly over [0, T); one frame picks the centre.
std::vector<int64_t> spread(int64_t T, int64_t count) {
  std::vector<int64_t> idx(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    idx[static_cast<size_t>(i)] =
        count == 1 ? (T - 1) / 2
                   : static_cast<int64_t>(std::lround(static_cast<double>(i) * (T - 1) /
                                                      static_cast<double>(count - 1)));
  }
  return idx;
}

Tensor gray_frame(const VideoClip& clip, int64_t t) {
  const int64_t C = clip.channels(), H = clip.height(), W = clip.width();
  Tensor f(Shape{C, H, W});
  std::copy(clip.frames.ptr() + t * C * H * W, clip.frames.ptr() + (t + 1) * C * H * W, f.ptr());
  if (C == 3) return rgb_to_gray(f);
  if (C == 1) return f.reshaped({H, W});
  throw ShapeError("flow inputs need 1- or 3-channel clips, got " + std::to_string(C));
}

// Softmax of K strided logits.
void softmax_row(const float* in, int64_t K, int64_t stride, std::vector<double>& out) {
  double m = -std::numeric_limits<double>::infinity();
  for (int64_t k = 0; k < K; ++k) m = std::max(m, static_cast<double>(in[k * stride]));
  double s = 0.0;
  out.resize(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    out[static_cast<size_t>(k)] = std::exp(in[k * stride] - m);
    s += out[static_cast<size_t>(k)];
  }
  for (double& v : out) v /= s;
}

bool outputs_probabilities(const GraphSpec& graph) {
  const NodeKind k = graph.node(graph.output()).kind;
  return k == NodeKind::kSoftmax || k == NodeKind::kAverage;
}

double global_norm(const Checkpoint& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads.entries()) s += dot(g, g);
  return std::sqrt(s);
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(learning_rate > 0.0)) bad("lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (!(drop_factor > 1.0)) bad("drop_factor must be > 1");
  if (patience < 0) bad("patience must be >= 0");
  if (!(min_delta >= 0.0)) bad("min_delta must be >= 0");
  if (max_steps < 0) bad("max_steps must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (eval_interval < 1) bad("eval_interval must be >= 1");
  if (!(clip_norm >= 0.0)) bad("clip_norm must be >= 0");
  augmentation.validate();
  flow.validate();
}

void TrainConfig::apply(const KeyValues& values) {
  for (const auto& [key, value] : values) {
    if (key == "lr") {
      learning_rate = parse_double(key, value);
    } else if (key == "momentum") {
      momentum = parse_double(key, value);
    } else if (key == "drop_factor") {
      drop_factor = parse_double(key, value);
    } else if (key == "patience") {
      patience = static_cast<int>(parse_int(key, value));
    } else if (key == "min_delta") {
      min_delta = parse_double(key, value);
    } else if (key == "max_steps") {
      max_steps = parse_int(key, value);
    } else if (key == "batch_size") {
      batch_size = parse_int(key, value);
    } else if (key == "eval_interval") {
      eval_interval = parse_int(key, value);
    } else if (key == "seed") {
      seed = static_cast<uint64_t>(parse_int(key, value));
    } else if (key == "clip_norm") {
      clip_norm = parse_double(key, value);
    } else if (key == "augment") {
      augment = parse_bool(key, value);
    } else if (key == "crop") {
      augmentation.crop = parse_int(key, value);
    } else if (key == "resize") {
      augmentation.resize_short_side = parse_int(key, value);
    } else if (key == "flip_probability") {
      augmentation.flip_probability = parse_double(key, value);
    } else if (key == "temporal_crop") {
      augmentation.temporal_crop = parse_int(key, value);
    } else {
      throw ConfigError("train config: unknown key '" + key + "'");
    }
  }
  validate();
}

std::string history_csv(const std::vector<MetricRow>& history) {
  std::ostringstream os;
  os.precision(9);
  os << "step,lr,train_loss,val_loss,val_acc\n";
  for (const MetricRow& r : history) {
    os << r.step << "," << r.lr << "," << r.train_loss << "," << r.val_loss << "," << r.val_acc
       << "\n";
  }
  return os.str();
}

void sgd_momentum_step(Checkpoint& params, const Checkpoint& grads, Checkpoint& velocity,
                       double lr, double momentum) {
  for (const auto& [name, g] : grads.entries()) {
    Tensor& p = params.get(name);
    if (p.shape() != g.shape()) {
      throw ShapeError("sgd: gradient of '" + name + "' has shape " + shape_to_string(g.shape()) +
                       ", parameter " + shape_to_string(p.shape()));
    }
    if (!velocity.contains(name)) velocity.add(name, Tensor(p.shape()));
    Tensor& v = velocity.get(name);
    if (v.shape() != p.shape()) {
      throw ShapeError("sgd: velocity of '" + name + "' has shape " + shape_to_string(v.shape()));
    }
    const float mu = static_cast<float>(momentum);
    const float step = static_cast<float>(lr);
    for (int64_t i = 0; i < p.numel(); ++i) {
      v[i] = mu * v[i] + g[i];
      p[i] -= step * v[i];
    }
  }
}

std::vector<Tensor> clip_inputs(const GraphSpec& graph, const VideoClip& clip,
                                const TVL1Params& flow) {
  clip.validate();
  const int64_t T = clip.length(), C = clip.channels(), H = clip.height(), W = clip.width();
  const bool fixed = fixed_length_inputs(graph);
  std::vector<Tensor> out;
  std::vector<Tensor> pair_flows;  // (2, H, W) per consecutive pair, computed lazily
  auto flows = [&]() -> const std::vector<Tensor>& {
    if (pair_flows.empty()) {
      if (T < 2) throw ConfigError("flow inputs need clips of at least 2 frames");
      std::vector<Tensor> gray;
      for (int64_t t = 0; t < T; ++t) gray.push_back(gray_frame(clip, t));
      const Tensor stack = flow_stack(gray, flow);
      for (int64_t i = 0; i + 1 < T; ++i) {
        Tensor f(Shape{2, H, W});
        std::copy(stack.ptr() + 2 * i * H * W, stack.ptr() + (2 * i + 2) * H * W, f.ptr());
        pair_flows.push_back(std::move(f));
      }
    }
    return pair_flows;
  };

  for (int idx : graph.inputs()) {
    const LayerNode& n = graph.node(idx);
    const int64_t nc = n.shape[0], nt = n.shape[1];
    if (n.shape[2] != H || n.shape[3] != W) {
      throw ShapeError("clip frames are " + std::to_string(H) + "x" + std::to_string(W) +
                       " but input '" + n.id + "' expects " + std::to_string(n.shape[2]) + "x" +
                       std::to_string(n.shape[3]));
    }
    if (n.modality == "flow") {
      const auto& f = flows();
      const int64_t steps = static_cast<int64_t>(f.size());
      if (nc == 2) {
        const int64_t len = fixed ? nt : steps;
        if (len > steps) {
          throw ConfigError("input '" + n.id + "' needs " + std::to_string(len) +
                            " flow steps, the clip has " + std::to_string(steps));
        }
        const std::vector<int64_t> pick = fixed ? spread(steps, len) : spread(steps, steps);
        Tensor x(Shape{1, 2, len, H, W});
        for (int64_t t = 0; t < len; ++t) {
          for (int64_t c = 0; c < 2; ++c) {
            const float* s = f[static_cast<size_t>(pick[static_cast<size_t>(t)])].ptr() + c * H * W;
            std::copy(s, s + H * W, x.ptr() + (c * len + t) * H * W);
          }
        }
        out.push_back(std::move(x));
        continue;
      }
      // Stacked flow: channels / 2 consecutive flows per time position.
      const int64_t L = nc / 2;
      if (nc % 2 != 0 || L > steps) {
        throw ConfigError("input '" + n.id + "' stacks " + std::to_string(L) +
                          " flow frames, the clip provides " + std::to_string(steps));
      }
      const std::vector<int64_t> centres = spread(T, nt);
      Tensor x(Shape{1, nc, nt, H, W});
      for (int64_t t = 0; t < nt; ++t) {
        const int64_t first =
            std::clamp<int64_t>(centres[static_cast<size_t>(t)] - L / 2, 0, steps - L);
        for (int64_t l = 0; l < L; ++l) {
          for (int64_t c = 0; c < 2; ++c) {
            const float* s = f[static_cast<size_t>(first + l)].ptr() + c * H * W;
            std::copy(s, s + H * W, x.ptr() + ((2 * l + c) * nt + t) * H * W);
          }
        }
      }
      out.push_back(std::move(x));
      continue;
    }
    if (nc != C) {
      throw ShapeError("input '" + n.id + "' expects " + std::to_string(nc) +
                       " channels, clip has " + std::to_string(C));
    }
    const std::vector<int64_t> pick = fixed ? spread(T, nt) : spread(T, T);
    const int64_t len = static_cast<int64_t>(pick.size());
    Tensor x(Shape{1, C, len, H, W});
    for (int64_t t = 0; t < len; ++t) {
      for (int64_t c = 0; c < C; ++c) {
        const float* s = clip.frames.ptr() + (pick[static_cast<size_t>(t)] * C + c) * H * W;
        float* d = x.ptr() + (c * len + t) * H * W;
        for (int64_t i = 0; i < H * W; ++i) d[i] = 2.0f * s[i] - 1.0f;
      }
    }
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Tensor> batch_inputs(const std::vector<const std::vector<Tensor>*>& items) {
  if (items.empty()) throw ConfigError("batch_inputs: empty batch");
  const size_t k = items.front()->size();
  std::vector<Tensor> out;
  for (size_t i = 0; i < k; ++i) {
    Shape s = (*items.front())[i].shape();
    const int64_t per = shape_numel(s) / s[0];
    s[0] = 0;
    for (const auto* it : items) {
      if (it->size() != k || (*it)[i].numel() != per) {
        throw ShapeError("batch_inputs: clips produce inputs of different shapes");
      }
      s[0] += (*it)[i].dim(0);
    }
    Tensor t(s);
    int64_t off = 0;
    for (const auto* it : items) {
      const Tensor& src = (*it)[i];
      std::copy(src.data().begin(), src.data().end(), t.ptr() + off);
      off += src.numel();
    }
    out.push_back(std::move(t));
  }
  return out;
}

Tensor clip_probabilities(const GraphSpec& graph, const Tensor& output) {
  if (output.rank() != 5) throw ShapeError("classifier output must be (N, K, T, 1, 1)");
  const int64_t N = output.dim(0), K = output.dim(1), T = output.dim(2);
  const int64_t hw = output.dim(3) * output.dim(4);
  const int64_t stride = T * hw;
  const bool probs = outputs_probabilities(graph);
  const bool last_step = graph.family == "lstm";
  Tensor p(Shape{N, K});
  std::vector<double> row;
  for (int64_t n = 0; n < N; ++n) {
    std::vector<double> acc(static_cast<size_t>(K), 0.0);
    const int64_t t0 = last_step ? T - 1 : 0;
    for (int64_t t = t0; t < T; ++t) {
      for (int64_t s = 0; s < hw; ++s) {
        const float* base = output.ptr() + n * K * stride + t * hw + s;
        if (probs) {
          for (int64_t k = 0; k < K; ++k) acc[static_cast<size_t>(k)] += base[k * stride];
        } else {
          softmax_row(base, K, stride, row);
          for (int64_t k = 0; k < K; ++k) acc[static_cast<size_t>(k)] += row[static_cast<size_t>(k)];
        }
      }
    }
    const double count = static_cast<double>((T - t0) * hw);
    for (int64_t k = 0; k < K; ++k) {
      p[n * K + k] = static_cast<float>(acc[static_cast<size_t>(k)] / count);
    }
  }
  return p;
}

LossResult classification_loss(const GraphSpec& graph, const Tensor& output,
                               const std::vector<int>& labels) {
  if (output.rank() != 5) throw ShapeError("classifier output must be (N, K, T, 1, 1)");
  const int64_t N = output.dim(0), K = output.dim(1), T = output.dim(2);
  const int64_t hw = output.dim(3) * output.dim(4);
  const int64_t stride = T * hw;
  if (static_cast<int64_t>(labels.size()) != N) {
    throw ShapeError("classification_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " outputs");
  }
  const bool probs = outputs_probabilities(graph);
  const double positions = static_cast<double>(T * hw);
  LossResult r;
  r.grad = Tensor(output.shape());
  std::vector<double> row;
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= K) {
      throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    }
    for (int64_t t = 0; t < T * hw; ++t) {
      const int64_t base = n * K * stride + t;
      const double scale = 1.0 / (static_cast<double>(N) * positions);
      if (probs) {
        const double py = std::max(static_cast<double>(output[base + y * stride]), 1e-12);
        total += -std::log(py) * scale;
        r.grad[base + y * stride] = static_cast<float>(-scale / py);
      } else {
        softmax_row(output.ptr() + base, K, stride, row);
        total += -std::log(std::max(row[static_cast<size_t>(y)], 1e-300)) * scale;
        for (int64_t k = 0; k < K; ++k) {
          const double g = row[static_cast<size_t>(k)] - (k == y ? 1.0 : 0.0);
          r.grad[base + k * stride] = static_cast<float>(g * scale);
        }
      }
    }
  }
  r.loss = total;
  return r;
}

EvalResult evaluate(const GraphSpec& graph, const Checkpoint& weights,
                    const std::vector<VideoClip>& clips, const TVL1Params& flow,
                    int64_t batch_size) {
  if (clips.empty()) throw ConfigError("evaluate: empty dataset");
  if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
  const int64_t K = graph.node(graph.output()).shape[0];
  EvalResult r;
  r.per_class_correct.assign(static_cast<size_t>(K), 0);
  r.per_class_total.assign(static_cast<size_t>(K), 0);
  double loss = 0.0;
  int64_t correct = 0;
  for (size_t start = 0; start < clips.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(clips.size(), start + static_cast<size_t>(batch_size));
    std::vector<std::vector<Tensor>> per;
    std::vector<const std::vector<Tensor>*> ptrs;
    for (size_t i = start; i < end; ++i) per.push_back(clip_inputs(graph, clips[i], flow));
    for (const auto& p : per) ptrs.push_back(&p);
    const ForwardPass pass = forward(graph, weights, batch_inputs(ptrs), Mode::kInfer);
    const Tensor probs = clip_probabilities(graph, pass.output(graph));
    for (size_t i = start; i < end; ++i) {
      const int64_t n = static_cast<int64_t>(i - start);
      int best = 0;
      for (int64_t k = 1; k < K; ++k) {
        if (probs[n * K + k] > probs[n * K + best]) best = static_cast<int>(k);
      }
      r.predictions.push_back(best);
      const int y = clips[i].label;
      if (y >= 0 && y < K) {
        loss += -std::log(std::max(static_cast<double>(probs[n * K + y]), 1e-12));
        r.per_class_total[static_cast<size_t>(y)] += 1;
        if (best == y) {
          ++correct;
          r.per_class_correct[static_cast<size_t>(y)] += 1;
        }
      }
    }
  }
  const double labeled = static_cast<double>(
      std::accumulate(r.per_class_total.begin(), r.per_class_total.end(), int64_t{0}));
  if (labeled > 0) {
    r.accuracy = static_cast<double>(correct) / labeled;
    r.loss = loss / labeled;
  }
  return r;
}

TrainResult train(const GraphSpec& graph, Checkpoint weights,
                  const std::vector<VideoClip>& train_set, const std::vector<VideoClip>& val_set,
                  const TrainConfig& config) {
  config.validate();
  check_weights(graph, weights);
  if (train_set.empty()) throw ConfigError("train: empty training set");
  if (val_set.empty()) throw ConfigError("train: empty validation set");
  for (const VideoClip& c : train_set) {
    if (c.label < 0) throw ConfigError("train: training clip without a label");
  }

  std::mt19937_64 rng(config.seed);
  // Inputs are fixed per clip unless augmentation redraws them every step.
  std::vector<std::vector<Tensor>> cached;
  if (!config.augment) {
    cached.reserve(train_set.size());
    for (const VideoClip& c : train_set) cached.push_back(clip_inputs(graph, c, config.flow));
  }

  TrainResult result;
  result.best = weights;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  Checkpoint velocity;
  double lr = config.learning_rate;
  int stale = 0;
  double loss_sum = 0.0;
  int64_t loss_count = 0;
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  size_t cursor = order.size();

  auto run_eval = [&](int64_t step) {
    const EvalResult ev = evaluate(graph, weights, val_set, config.flow);
    MetricRow row;
    row.step = step;
    row.lr = lr;
    row.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    row.val_loss = ev.loss;
    row.val_acc = ev.accuracy;
    result.history.push_back(row);
    loss_sum = 0.0;
    loss_count = 0;
    if (ev.loss < result.best_val_loss - config.min_delta) {
      result.best_val_loss = ev.loss;
      result.best = weights;
      stale = 0;
    } else if (config.patience > 0 && ++stale >= config.patience) {
      lr /= config.drop_factor;
      stale = 0;
    }
  };

  for (int64_t step = 1; step <= config.max_steps; ++step) {
    std::vector<size_t> picks;
    for (int64_t b = 0; b < config.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }
    std::vector<std::vector<Tensor>> fresh;
    std::vector<const std::vector<Tensor>*> ptrs;
    std::vector<int> labels;
    for (size_t i : picks) {
      labels.push_back(train_set[i].label);
      if (config.augment) {
        fresh.push_back(
            clip_inputs(graph, augment_train(train_set[i], config.augmentation, rng), config.flow));
      }
    }
    if (config.augment) {
      for (const auto& f : fresh) ptrs.push_back(&f);
    } else {
      for (size_t i : picks) ptrs.push_back(&cached[i]);
    }

    const ForwardPass pass = forward(graph, weights, batch_inputs(ptrs), Mode::kTrain);
    const LossResult loss = classification_loss(graph, pass.output(graph), labels);
    if (!std::isfinite(loss.loss)) {
      throw NumericError("non-finite training loss at step " + std::to_string(step));
    }
    Checkpoint grads = backward(graph, weights, pass, loss.grad);
    if (config.clip_norm > 0.0) {
      const double norm = global_norm(grads);
      if (norm > config.clip_norm) {
        const float k = static_cast<float>(config.clip_norm / norm);
        for (const std::string& name : grads.names()) {
          for (float& v : grads.get(name).data()) v *= k;
        }
      }
    }
    sgd_momentum_step(weights, grads, velocity, lr, config.momentum);
    update_running_stats(graph, weights, pass);
    loss_sum += loss.loss;
    ++loss_count;
    if (step % config.eval_interval == 0 && step != config.max_steps) run_eval(step);
  }
  run_eval(config.max_steps);
  result.last = weights;
  result.final_lr = lr;
  return result;
}

}  // namespace i3d
