// Acceptance checks 1-10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Tolerances are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/file_oracles.hpp"
#include "../support/flow_fixtures.hpp"
#include "../support/rf_oracle.hpp"
#include "../unit/test_util.hpp"
#include "CLI11.hpp"
#include "i3d/checkpoint.hpp"
#include "i3d/error.hpp"
#include "i3d/flow.hpp"
#include "i3d/graph.hpp"
#include "i3d/inflate.hpp"
#include "i3d/network.hpp"
#include "i3d/ops.hpp"
#include "i3d/parallel.hpp"
#include "i3d/trainer.hpp"
#include "i3d/video.hpp"

namespace fs = std::filesystem;
using namespace i3d;

namespace {

// Criterion 1
constexpr double kFixedPointTol = 1e-4;
constexpr int kFixedPointImages = 10;
constexpr int kCalibrationImages = 256;
constexpr double kFixedPointSeconds = 120.0;
// Criterion 2
constexpr double kTimeSumTol = 1e-7;
// Criterion 3
constexpr double kCountTol = 0.20;
// Criterion 5
constexpr double kOracleTol = 1e-5;
constexpr int kOracleCases = 20;
constexpr double kFdTol = 1e-3;
constexpr int kFdSeeds = 5;
// Share of network input elements whose probe must stay on one smooth piece.
constexpr double kFdMinSmooth = 0.75;
// Criterion 7
constexpr double kIdenticalFlowMax = 1e-3;
constexpr double kEpeMax = 0.5;
constexpr double kFlowSeconds = 30.0;
// Criterion 8
constexpr double kI3dMinAccuracy = 0.90;
constexpr double kChanceMaxAccuracy = 0.60;
constexpr int64_t kStepBudget = 2000;
constexpr int64_t kI3dSteps = 600;
constexpr int64_t k2dSteps = 400;
constexpr double kTemporalSeconds = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ArchConfig toy_inception(double width) {
  ArchConfig a = ArchConfig::defaults(Family::kInception2d);
  a.num_classes = 10;
  a.width_multiplier = width;
  a.height = a.width = 32;
  a.toy_geometry = true;
  return a;
}

// ---------------------------------------------------------------------------

Outcome fixed_point() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(1);
  const GraphSpec g2 = build_inception_v1_2d(toy_inception(0.25));
  Checkpoint w2 = init_weights(g2, 1);
  calibrate_batchnorm(g2, w2,
                      {testing::random_tensor({kCalibrationImages, 3, 1, 32, 32}, rng)});
  const Inflated inf = inflate_graph(g2, w2, InflationRule::i3d());
  double worst_logit = 0.0, worst_ratio = 0.0;
  bool all = true;
  int64_t frames = 0;
  size_t layers = 0;
  for (int i = 0; i < kFixedPointImages; ++i) {
    const Tensor image = testing::random_tensor({3, 32, 32}, rng);
    const FixedPointReport r =
        verify_fixed_point(g2, w2, inf.graph, inf.weights, image, kFixedPointTol);
    all = all && r.passed;
    worst_logit = std::max(worst_logit, r.max_logit_deviation);
    for (const LayerDeviation& l : r.layers) {
      worst_ratio = std::max(worst_ratio, l.max_deviation / (kFixedPointTol * l.scale));
    }
    frames = r.frames;
    layers = r.layers.size();
  }
  const double secs = seconds_since(t0);
  return {all && worst_logit <= kFixedPointTol && secs < kFixedPointSeconds,
          "max logit dev " + fmt("%.2e", worst_logit) + ", worst layer dev/tol " +
              fmt("%.3f", worst_ratio) + " over " + std::to_string(layers) + " layers, T=" +
              std::to_string(frames) + ", " + fmt("%.1fs", secs)};
}

Outcome weight_rule() {
  ArchConfig a = ArchConfig::defaults(Family::kInception2d);
  a.num_classes = 400;
  const GraphSpec g2 = build_inception_v1_2d(a);
  const Checkpoint w2 = init_weights(g2, 2);
  const Inflated inf = inflate_graph(g2, w2, InflationRule::i3d());
  double worst_sum = 0.0, worst_slice = 0.0;
  int kernels = 0;
  for (const auto& [name, k3] : inf.weights.entries()) {
    if (k3.rank() != 5) continue;
    const Tensor& k2 = w2.get(name);
    ++kernels;
    const int64_t n = k3.dim(2), plane = k3.dim(3) * k3.dim(4);
    const int64_t pairs = k3.dim(0) * k3.dim(1);
    for (int64_t p = 0; p < pairs; ++p)
      for (int64_t s = 0; s < plane; ++s) {
        double sum = 0.0;
        const float first = k3[(p * n) * plane + s];
        for (int64_t t = 0; t < n; ++t) {
          const float v = k3[(p * n + t) * plane + s];
          sum += v;
          worst_slice = std::max(worst_slice, std::abs(double(v) - first));
        }
        worst_sum = std::max(worst_sum, std::abs(sum - k2[p * plane + s]));
      }
  }
  return {worst_slice == 0.0 && worst_sum <= kTimeSumTol && kernels > 50,
          std::to_string(kernels) + " kernels, slice spread " + fmt("%.1e", worst_slice) +
              ", max |time-sum - 2D| " + fmt("%.2e", worst_sum)};
}

Outcome param_counts() {
  struct Row {
    const char* name;
    Family family;
    double nominal;
  };
  const Row rows[] = {{"LSTM", Family::kLstm, 9e6},
                      {"3D-ConvNet", Family::kC3d, 79e6},
                      {"Two-Stream", Family::kTwoStream, 12e6},
                      {"3D-Fused", Family::kFused3d, 39e6},
                      {"Two-Stream I3D", Family::kI3d, 25e6}};
  bool ok = true;
  std::string detail;
  for (const Row& r : rows) {
    ArchConfig a = ArchConfig::defaults(r.family);
    a.num_classes = 400;
    const int64_t n = count_params(build_graph(a));
    const double rel = (static_cast<double>(n) - r.nominal) / r.nominal;
    ok = ok && std::abs(rel) <= kCountTol;
    detail += std::string(detail.empty() ? "" : ", ") + r.name + " " + std::to_string(n) +
              " (" + fmt("%+.1f%%", 100 * rel) + ")";
  }
  return {ok, detail};
}

Outcome footprints() {
  const double fps = ArchConfig::defaults(Family::kI3d).fps;
  const ArchConfig lstm = ArchConfig::defaults(Family::kLstm);
  const ArchConfig c3d = ArchConfig::defaults(Family::kC3d);
  const ArchConfig two = ArchConfig::defaults(Family::kTwoStream);
  const ArchConfig fused = ArchConfig::defaults(Family::kFused3d);
  const ArchConfig i3d = ArchConfig::defaults(Family::kI3d);
  struct Row {
    const char* name;
    double got, want;
  };
  const Row rows[] = {
      {"LSTM", temporal_footprint(lstm.frames, 5, fps), 5.0},
      {"3D-ConvNet", temporal_footprint(c3d.frames, 1, fps), 0.64},
      {"Two-Stream", temporal_footprint(two.flow_frames, 1, fps), 0.4},
      {"3D-Fused", temporal_footprint(fused.frames * fused.flow_frames, 1, fps), 2.0},
      {"Two-Stream I3D", temporal_footprint(i3d.frames, 1, fps), 2.56},
      {"LSTM test", temporal_footprint(50, 5, fps), 10.0},
      {"3D-ConvNet test", temporal_footprint(240, 1, fps), 9.6},
      {"Two-Stream test", temporal_footprint(250, 1, fps), 10.0},
      {"3D-Fused test", temporal_footprint(250, 1, fps), 10.0},
      {"I3D test", temporal_footprint(250, 1, fps), 10.0}};
  bool ok = true;
  std::string detail;
  for (const Row& r : rows) {
    ok = ok && r.got == r.want;
    if (&r - rows < 5) detail += std::string(detail.empty() ? "" : ", ") + fmt("%gs", r.got);
  }
  return {ok, detail + " (train rows), 10s/9.6s test rows"};
}

// ---------------------------------------------------------------------------

struct FdTally {
  int checks = 0;
  double worst = 0.0;
  std::string worst_site;
  int64_t network_input_kept = 0;
  int64_t network_input_total = 0;

  void add(const std::string& site, const Tensor& analytic, const std::vector<double>& numeric) {
    const double e = testing::relative_error(analytic, numeric);
    ++checks;
    if (e > worst || !std::isfinite(e)) {
      worst = std::isfinite(e) ? e : 1e9;
      worst_site = site;
    }
  }
};

using testing::numeric_gradient;
using testing::probe_loss;
using testing::random_tensor;

void fd_primitives(unsigned seed, FdTally& fd) {
  std::mt19937 rng(1000 + seed);
  const std::string tag = " seed " + std::to_string(seed);
  {
    ConvSpec spec;
    spec.kernel = {2, 3, 3};
    spec.stride = {1 + int(seed % 2), 2, 1};
    spec.padding = {Padding::kSame, seed % 2 ? Padding::kValid : Padding::kSame, Padding::kSame};
    const Tensor x = random_tensor({2, 2, 4, 5, 5}, rng);
    const Tensor k = random_tensor({3, 2, 2, 3, 3}, rng);
    const Tensor r = random_tensor(conv3d_forward(x, k, spec).shape(), rng);
    const ConvGrads g = conv3d_backward(r, x, k, spec);
    fd.add("conv3d input" + tag, g.input, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(conv3d_forward(v, k, spec), r); }, x));
    fd.add("conv3d kernel" + tag, g.kernel, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(conv3d_forward(x, v, spec), r); }, k));
    const Tensor b = random_tensor({3}, rng);
    fd.add("conv3d bias" + tag, g.bias, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(conv3d_forward(x, k, spec, &v), r); }, b));
  }
  for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg}) {
    const PoolSpec spec{kind, ConvSpec::cube(3, 2)};
    const Tensor x = testing::distinct_tensor({1, 2, 4, 5, 5}, rng);
    const Tensor r = random_tensor(pool3d_forward(x, spec).shape(), rng);
    fd.add(std::string(kind == PoolKind::kMax ? "max" : "avg") + " pool" + tag,
           pool3d_backward(r, x, spec), numeric_gradient(
               [&](const Tensor& v) { return probe_loss(pool3d_forward(v, spec), r); }, x));
  }
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    const Tensor x = random_tensor({3, 2, 2, 3, 2}, rng);
    BatchNormState s = BatchNormState::identity(2);
    s.gamma = random_tensor({2}, rng, 0.5f, 1.5f);
    s.beta = random_tensor({2}, rng);
    s.running_mean = random_tensor({2}, rng);
    s.running_var = random_tensor({2}, rng, 0.5f, 1.5f);
    const Tensor r = random_tensor(x.shape(), rng);
    const BatchNormGrads g = batchnorm_backward(r, x, s, batchnorm_forward(x, s, mode), mode);
    const std::string m = mode == Mode::kTrain ? " train" : " infer";
    fd.add("batchnorm input" + m + tag, g.input, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(batchnorm_forward(v, s, mode).output, r); }, x));
    fd.add("batchnorm gamma" + m + tag, g.gamma, numeric_gradient([&](const Tensor& v) {
      BatchNormState t = s;
      t.gamma = v;
      return probe_loss(batchnorm_forward(x, t, mode).output, r);
    }, s.gamma));
    fd.add("batchnorm beta" + m + tag, g.beta, numeric_gradient([&](const Tensor& v) {
      BatchNormState t = s;
      t.beta = v;
      return probe_loss(batchnorm_forward(x, t, mode).output, r);
    }, s.beta));
  }
  {
    // Values at least 0.01 away from the kink at 0.
    Tensor x = testing::distinct_tensor({2, 3, 4}, rng, 0.02f);
    for (float& v : x.data()) v += 0.01f;
    const Tensor r = random_tensor(x.shape(), rng);
    fd.add("relu" + tag, relu_backward(r, relu_forward(x)), numeric_gradient(
        [&](const Tensor& v) { return probe_loss(relu_forward(v), r); }, x));
  }
  {
    const Tensor x = random_tensor({4, 6}, rng), w = random_tensor({3, 6}, rng);
    const Tensor b = random_tensor({3}, rng), r = random_tensor({4, 3}, rng);
    const LinearGrads g = linear_backward(r, x, w);
    fd.add("linear input" + tag, g.input, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(linear_forward(v, w, &b), r); }, x));
    fd.add("linear weight" + tag, g.weight, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(linear_forward(x, v, &b), r); }, w));
    fd.add("linear bias" + tag, g.bias, numeric_gradient(
        [&](const Tensor& v) { return probe_loss(linear_forward(x, w, &v), r); }, b));
  }
  {
    const Tensor z = random_tensor({5, 4}, rng, -3.0f, 3.0f);
    const std::vector<int> labels{0, 1, 2, 3, static_cast<int>(seed % 4)};
    fd.add("softmax cross-entropy" + tag,
           softmax_cross_entropy_backward(softmax_cross_entropy(z, labels).probs, labels),
           numeric_gradient([&](const Tensor& v) { return softmax_cross_entropy(v, labels).loss; },
                            z));
    const Tensor p = softmax(z);
    fd.add("softmax + nll" + tag, softmax_backward(nll_loss_backward(p, labels), p),
           numeric_gradient([&](const Tensor& v) { return nll_loss(softmax(v), labels); }, z));
  }
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    const int64_t n = 3, d = 4, h = 3, t = 3;
    LstmParams p = LstmParams::zeros(d, h);
    p.w_ih = random_tensor({4 * h, d}, rng);
    p.w_hh = random_tensor({4 * h, h}, rng);
    p.bias = random_tensor({4 * h}, rng);
    p.gamma_ih = random_tensor({4 * h}, rng, 0.5f, 1.0f);
    p.gamma_hh = random_tensor({4 * h}, rng, 0.5f, 1.0f);
    p.running_mean_ih = random_tensor({4 * h}, rng);
    p.running_var_ih = random_tensor({4 * h}, rng, 0.5f, 2.0f);
    p.running_mean_hh = random_tensor({4 * h}, rng);
    p.running_var_hh = random_tensor({4 * h}, rng, 0.5f, 2.0f);
    const Tensor x = random_tensor({n, d, t}, rng);
    const Tensor h0 = random_tensor({n, h}, rng), c0 = random_tensor({n, h}, rng);
    const Tensor r = random_tensor({n, h, t}, rng);
    const LstmGrads g = lstm_backward(r, p, lstm_forward(x, p, mode, &h0, &c0));
    // Inference-mode f32 rounding needs the wider step.
    const double step = mode == Mode::kTrain ? 1e-3 : 1e-2;
    const std::string m = mode == Mode::kTrain ? " train" : " infer";
    auto loss = [&](const LstmParams& q, const Tensor& xx, const Tensor& hh, const Tensor& cc) {
      return probe_loss(lstm_forward(xx, q, mode, &hh, &cc).h, r);
    };
    fd.add("lstm input" + m + tag, g.input, numeric_gradient(
        [&](const Tensor& v) { return loss(p, v, h0, c0); }, x, step));
    fd.add("lstm h0" + m + tag, g.h0, numeric_gradient(
        [&](const Tensor& v) { return loss(p, x, v, c0); }, h0, step));
    fd.add("lstm c0" + m + tag, g.c0, numeric_gradient(
        [&](const Tensor& v) { return loss(p, x, h0, v); }, c0, step));
    const std::pair<const Tensor*, Tensor LstmParams::*> fields[] = {
        {&g.w_ih, &LstmParams::w_ih}, {&g.w_hh, &LstmParams::w_hh},
        {&g.bias, &LstmParams::bias}, {&g.gamma_ih, &LstmParams::gamma_ih},
        {&g.gamma_hh, &LstmParams::gamma_hh}};
    for (const auto& [grad, field] : fields) {
      fd.add("lstm params" + m + tag, *grad, numeric_gradient([&, field = field](const Tensor& v) {
        LstmParams q = p;
        q.*field = v;
        return loss(q, x, h0, c0);
      }, p.*field, step));
    }
  }
}

// Graph touching concat, add, temporal mean and planar convolutions.
GraphSpec fd_graph() {
  GraphBuilder b("fd");
  const int x = b.input("input", {2, 4, 6, 6});
  const int a = b.conv_unit("a", x, 3, ConvSpec::cube(3, 1));
  const int p = b.pool("p", a, PoolKind::kMax, ConvSpec::cube(2, 2));
  const int c1 = b.conv("c1", p, 2, ConvSpec::cube(1));
  const int c2 = b.conv("c2", p, 2, ConvSpec::planar(3), true);
  const int cat = b.concat("cat", {c1, c2});
  const int s = b.add_nodes("sum", {c1, c2});
  const int avg = b.pool("avg", cat, PoolKind::kAvg, ConvSpec::cube(3, 1));
  const int y = b.concat("y", {avg, s});
  const int fc = b.linear("fc", y, 3, true);
  return b.finish(b.temporal_mean("mean", fc));
}

void fd_network(unsigned seed, FdTally& fd) {
  std::mt19937 rng(2000 + seed);
  const GraphSpec g = fd_graph();
  const Checkpoint w = init_weights(g, seed);
  const Tensor x = random_tensor({2, 2, 4, 6, 6}, rng);
  const ForwardPass pass = forward(g, w, {x}, Mode::kTrain);
  const Tensor r = random_tensor(pass.output(g).shape(), rng);
  const FullGradients grads = backward_full(g, w, pass, r);
  for (const auto& [name, grad] : grads.params.entries()) {
    fd.add("network " + name + " seed " + std::to_string(seed), grad,
           numeric_gradient([&, name = name](const Tensor& v) {
             Checkpoint c = w;
             c.set(name, v);
             return probe_loss(forward(g, c, {x}, Mode::kTrain).output(g), r);
           }, w.get(name)));
  }
  // The network is piecewise smooth, so a central difference is only
  // meaningful when the relu signs and max-pool winners agree at both probe
  // points. Input elements whose probe crosses a switch are left out.
  auto probe = [&](const Tensor& v, std::vector<int>& bits) {
    const ForwardPass p = forward(g, w, {v}, Mode::kTrain);
    const Tensor& pre = p.outputs[static_cast<size_t>(g.find("a/bn"))];
    const Tensor& act = p.outputs[static_cast<size_t>(g.find("a/relu"))];
    bits.clear();
    for (float u : pre.data()) bits.push_back(u > 0.0f);
    const Shape& s = act.shape();
    for (int64_t n = 0; n < s[0] * s[1]; ++n)
      for (int64_t t = 0; t < s[2]; t += 2)
        for (int64_t h = 0; h < s[3]; h += 2)
          for (int64_t q = 0; q < s[4]; q += 2) {
            int best = 0;
            float top = -1.0f;
            for (int k = 0; k < 8; ++k) {
              const float u = act[((n * s[2] + t + (k >> 2)) * s[3] + h + ((k >> 1) & 1)) * s[4] +
                                  q + (k & 1)];
              if (u > top) top = u, best = k;
            }
            bits.push_back(top > 0.0f ? best : -1);
          }
    return probe_loss(p.output(g), r);
  };
  constexpr double kStep = 1e-2;
  std::vector<int> base, up_bits, down_bits;
  probe(x, base);
  std::vector<float> analytic;
  std::vector<double> numeric;
  Tensor v = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    v[i] = static_cast<float>(x[i] + kStep);
    const double up = probe(v, up_bits);
    v[i] = static_cast<float>(x[i] - kStep);
    const double down = probe(v, down_bits);
    v[i] = x[i];
    if (up_bits != base || down_bits != base) continue;
    analytic.push_back(grads.inputs[0][i]);
    numeric.push_back((up - down) / (2.0 * kStep));
  }
  fd.network_input_kept += static_cast<int64_t>(analytic.size());
  fd.network_input_total += x.numel();
  const int64_t kept = static_cast<int64_t>(analytic.size());
  fd.add("network input seed " + std::to_string(seed), Tensor({kept}, std::move(analytic)),
         numeric);
}

Outcome primitives() {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int> kdist(1, 3), sdist(1, 2), pdist(0, 1), ldist(3, 7);
  double worst = 0.0;
  int cases = 0;
  for (int i = 0; i < kOracleCases; ++i) {
    ConvSpec spec;
    for (int ax = 0; ax < 3; ++ax) {
      spec.kernel[ax] = kdist(rng);
      spec.stride[ax] = sdist(rng);
      spec.padding[ax] = pdist(rng) ? Padding::kSame : Padding::kValid;
    }
    const Tensor x = random_tensor({2, 3, ldist(rng), ldist(rng), ldist(rng)}, rng);
    const Tensor k = random_tensor({4, 3, spec.kernel[0], spec.kernel[1], spec.kernel[2]}, rng);
    worst = std::max(worst, double(max_abs_diff(conv3d_forward(x, k, spec),
                                                testing::ref_conv3d(x, k, spec))));
    for (PoolKind kind : {PoolKind::kMax, PoolKind::kAvg}) {
      const PoolSpec ps{kind, spec};
      worst = std::max(worst, double(max_abs_diff(pool3d_forward(x, ps),
                                                  testing::ref_pool3d(x, ps))));
    }
    cases += 3;
  }
  FdTally fd;
  for (unsigned seed = 0; seed < kFdSeeds; ++seed) {
    fd_primitives(seed, fd);
    fd_network(seed, fd);
  }
  const double smooth =
      static_cast<double>(fd.network_input_kept) / static_cast<double>(fd.network_input_total);
  return {worst <= kOracleTol && fd.worst < kFdTol && smooth >= kFdMinSmooth,
          std::to_string(cases) + " forward cases max abs err " + fmt("%.1e", worst) + "; " +
              std::to_string(fd.checks) + " gradient checks over " + std::to_string(kFdSeeds) +
              " seeds, worst rel err " + fmt("%.1e", fd.worst) + " (" + fd.worst_site + "); " +
              fmt("%.0f", 100.0 * smooth) + "% of network input probes off switch points"};
}

Outcome receptive_fields() {
  ArchConfig a = ArchConfig::defaults(Family::kI3d);
  a.num_classes = 5;
  a.width_multiplier = 0.25;
  a.frames = 24;
  a.height = a.width = 40;
  a.toy_geometry = true;
  a.streams = Streams::kRgb;
  const GraphSpec g = build_i3d(a);
  const testing::RfCheck r = testing::check_receptive_fields(g);

  ArchConfig full = ArchConfig::defaults(Family::kI3d);
  full.streams = Streams::kRgb;
  const GraphSpec gf = build_i3d(full);
  auto jump = [&](const std::string& id) { return receptive_field(gf, id).jump[0]; };
  const bool pools_unstrided = gf.node("pool1").window.stride[0] == 1 &&
                               gf.node("pool2").window.stride[0] == 1 &&
                               jump("pool1") == jump("conv1") && jump("pool2") == jump("conv1");
  const int64_t total = jump("inception_5b");
  return {r.mismatches == 0 && r.layers > 100 && pools_unstrided && total == 8,
          std::to_string(r.layers) + " layers x " + std::to_string(r.probes) +
              " probes on (t,x,y), " + std::to_string(r.mismatches) +
              " mismatches; pool1/pool2 temporal stride 1 (jump stays " +
              std::to_string(jump("pool2")) + "), final temporal jump " + std::to_string(total) +
              (r.mismatches ? "; first: " + r.first_mismatch : "")};
}

Outcome tvl1_flow() {
  const int64_t n = 128;
  double worst_epe = 0.0, worst_secs = 0.0;
  bool monotone = true;
  const Tensor base = testing::textured_noise(n, 3);
  auto t0 = std::chrono::steady_clock::now();
  const FlowField same = tvl1(base, base);
  worst_secs = seconds_since(t0);
  float identical = 0.0f;
  for (float v : same.u.data()) identical = std::max(identical, std::abs(v));
  for (float v : same.v.data()) identical = std::max(identical, std::abs(v));
  const std::pair<int, int> shifts[] = {{1, 0}, {-1, 0}, {2, 0}, {-2, 0},
                                        {0, 1}, {0, -1}, {0, 2}, {0, -2}};
  for (const auto& [dx, dy] : shifts) {
    const Tensor b = testing::circular_shift(base, dx, dy);
    TVL1Log log;
    t0 = std::chrono::steady_clock::now();
    const FlowField f = tvl1(base, b, {}, &log);
    worst_secs = std::max(worst_secs, seconds_since(t0));
    worst_epe = std::max(worst_epe, testing::interior_epe(f, dx, dy));
    for (size_t i = 1; i < log.finest_energy.size(); ++i) {
      monotone = monotone && log.finest_energy[i] <= log.finest_energy[i - 1];
    }
  }
  return {identical < kIdenticalFlowMax && worst_epe < kEpeMax && monotone &&
              worst_secs < kFlowSeconds,
          "identical max " + fmt("%.1e", identical) + ", worst EPE " + fmt("%.4f", worst_epe) +
              " px over 8 shifts (textured noise, central 80%), energy " +
              (monotone ? "non-increasing" : "ROSE") + ", slowest pair " +
              fmt("%.2fs", worst_secs)};
}

// ---------------------------------------------------------------------------

Outcome temporal_structure() {
  const auto t0 = std::chrono::steady_clock::now();
  const ClipGeometry geom{16, 32, 32, 3};
  const auto train_set = gen_synthetic_temporal(SyntheticTask::kOrder, 100, geom, 100);
  const auto val_set = gen_synthetic_temporal(SyntheticTask::kOrder, 25, geom, 101);
  const auto test_set = gen_synthetic_temporal(SyntheticTask::kOrder, 50, geom, 102);

  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 8;
  cfg.eval_interval = 50;
  cfg.seed = 7;

  ArchConfig a = ArchConfig::defaults(Family::kI3d);
  a.num_classes = 2;
  a.width_multiplier = 0.25;
  a.frames = geom.frames;
  a.height = a.width = geom.height;
  a.toy_geometry = true;
  a.streams = Streams::kRgb;
  const GraphSpec i3d = build_i3d(a);
  cfg.max_steps = kI3dSteps;
  const TrainResult r3 = train(i3d, init_weights(i3d, 1), train_set, val_set, cfg);
  const double acc3 = evaluate(i3d, r3.best, test_set).accuracy;
  std::mt19937_64 rng(9);
  std::vector<VideoClip> shuffled;
  for (const VideoClip& c : test_set) shuffled.push_back(shuffle_frames(c, rng));
  const double acc_shuffled = evaluate(i3d, r3.best, shuffled).accuracy;

  ArchConfig b = toy_inception(0.25);
  b.num_classes = 2;
  const GraphSpec g2 = build_inception_v1_2d(b);
  cfg.max_steps = k2dSteps;
  const TrainResult r2 = train(g2, init_weights(g2, 1), train_set, val_set, cfg);
  const double acc2 = evaluate(g2, r2.best, test_set).accuracy;

  const double secs = seconds_since(t0);
  return {acc3 >= kI3dMinAccuracy && acc2 <= kChanceMaxAccuracy &&
              acc_shuffled <= kChanceMaxAccuracy && kI3dSteps <= kStepBudget &&
              secs < kTemporalSeconds,
          "I3D test acc " + fmt("%.2f", acc3) + " after " + std::to_string(kI3dSteps) +
              " steps, shuffled frames " + fmt("%.2f", acc_shuffled) + ", 2D model " +
              fmt("%.2f", acc2) + " after " + std::to_string(k2dSteps) + " steps, " +
              fmt("%.0fs", secs)};
}

Outcome round_trips() {
  ArchConfig a = ArchConfig::defaults(Family::kI3d);
  a.num_classes = 7;
  a.width_multiplier = 0.25;
  a.frames = 16;
  a.height = a.width = 32;
  a.toy_geometry = true;
  const GraphSpec g = build_i3d(a);
  Checkpoint w = init_weights(g, 11);
  w.family = "family=i3d,classes=7";
  const fs::path dir = fs::temp_directory_path() / "i3d_acceptance_roundtrip";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(w, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  const std::string bytes_a = testing::slurp((dir / "a.ckpt").string());
  const std::string bytes_b = testing::slurp((dir / "b.ckpt").string());
  bool tensors_equal = back == w;
  const testing::OracleCheckpoint o = testing::oracle_read_checkpoint(bytes_a);
  bool oracle_ok = o.ok && o.order == w.names();
  for (const auto& [name, t] : w.entries()) {
    oracle_ok = oracle_ok && o.tensors.count(name) &&
                o.tensors.at(name).values == std::vector<float>(t.data().begin(), t.data().end());
  }

  const Tensor frame = testing::textured_noise(64, 4);
  const FlowField flow = tvl1(frame, testing::circular_shift(frame, 2, -1));
  write_flo(flow, dir / "f.flo");
  const testing::OracleFlo of = testing::oracle_read_flo(testing::slurp((dir / "f.flo").string()));
  bool flo_ok = of.ok && of.width == flow.width() && of.height == flow.height();
  for (int64_t i = 0; flo_ok && i < flow.u.numel(); ++i) {
    flo_ok = of.u[static_cast<size_t>(i)] == flow.u[i] && of.v[static_cast<size_t>(i)] == flow.v[i];
  }
  const FlowField fb = read_flo(dir / "f.flo");
  flo_ok = flo_ok && fb.u == flow.u && fb.v == flow.v;
  fs::remove_all(dir);
  return {tensors_equal && bytes_a == bytes_b && oracle_ok && flo_ok,
          std::to_string(w.size()) + " tensors, " + std::to_string(bytes_a.size()) + " bytes " +
              (bytes_a == bytes_b ? "re-saved identically" : "DIFFER on re-save") +
              ", independent parser " + (oracle_ok ? "agrees" : "DISAGREES") + "; .flo " +
              std::to_string(flow.width()) + "x" + std::to_string(flow.height()) + " " +
              (flo_ok ? "read back exactly by both parsers" : "MISMATCH")};
}

// ---------------------------------------------------------------------------

// Every file under `root` by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::string content = testing::slurp(e.path().string());
    // Console output names its own directory; compare it without that prefix.
    if (e.path().extension() == ".stdout") {
      const std::string prefix = root.string();
      for (size_t at; (at = content.find(prefix)) != std::string::npos;) {
        content.replace(at, prefix.size(), "<root>");
      }
    }
    files[fs::relative(e.path(), root).string()] = content;
  }
  return files;
}

std::string g_kit;  // i3dkit binary, from --kit

Outcome cli_determinism() {
  const std::string& kit = g_kit;
  if (kit.empty() || !fs::exists(kit)) return {false, "i3dkit binary not found: '" + kit + "'"};
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen", "gen-data --task order --n 3 --frames 8 --size 32 --out {r}/data"},
      {"build", "build --family inception2d --classes 4 --width 0.125 --size 32 --toy --out "
                "{r}/2d.ckpt"},
      {"count", "count-params --ckpt {r}/2d.ckpt"},
      {"footprint", "footprint --frames 64"},
      {"rf", "receptive-field --family i3d --streams rgb --width 0.125 --frames 16 --size 32 "
             "--toy --classes 4"},
      {"inflate", "inflate --graph2d {r}/2d.ckpt --frames 16 --out {r}/3d.ckpt"},
      {"verify", "verify-fixed-point --ckpt2d {r}/2d.ckpt --ckpt3d {r}/3d.ckpt --images 2 "
                 "--out {r}/verify.txt"},
      {"flow", "flow --a {r}/data/test/clip_000000/frame_000000.ppm --b "
               "{r}/data/test/clip_000000/frame_000001.ppm --out {r}/pair.flo"},
      {"flowstack", "flow-stack --dir {r}/data/test/clip_000001 --out {r}/stack"},
      {"train", "train --family i3d --streams rgb --width 0.125 --toy --data {r}/data "
                "--max-steps 4 --eval-interval 2 --batch-size 2 --augment --out "
                "{r}/run"},
      {"eval", "eval --ckpt {r}/run/best.ckpt --data {r}/data --shuffle-frames"},
      {"filters", "dump-filters --ckpt {r}/3d.ckpt --layer conv1 --out {r}/filters"},
  };
  const fs::path base = fs::temp_directory_path() / "i3d_acceptance_cli";
  fs::remove_all(base);
  std::vector<std::map<std::string, std::string>> runs;
  std::string failed;
  for (const char* run : {"a", "b"}) {
    const fs::path root = base / run;
    fs::create_directories(root);
    for (const auto& [name, args] : commands) {
      std::string line = args;
      for (size_t at; (at = line.find("{r}")) != std::string::npos;) {
        line.replace(at, 3, root.string());
      }
      const std::string cmd = "\"" + kit + "\" " + line + " --threads 1 --seed 5 > \"" +
                              (root / (name + ".stdout")).string() + "\" 2>&1";
      if (std::system(cmd.c_str()) != 0 && failed.empty()) failed = name;
    }
    runs.push_back(snapshot(root));
  }
  fs::remove_all(base);
  std::vector<std::string> differing;
  std::set<std::string> names;
  for (const auto& r : runs)
    for (const auto& [k, v] : r) names.insert(k);
  for (const std::string& k : names) {
    if (!runs[0].count(k) || !runs[1].count(k) || runs[0].at(k) != runs[1].at(k)) {
      differing.push_back(k);
    }
  }
  std::string detail = std::to_string(commands.size()) + " commands, " +
                       std::to_string(names.size()) + " output files compared, " +
                       std::to_string(differing.size()) + " differ";
  if (!differing.empty()) detail += " (first: " + differing.front() + ")";
  if (!failed.empty()) detail += "; command '" + failed + "' failed";
  return {failed.empty() && differing.empty() && names.size() > commands.size(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("acceptance checks");
  std::vector<int> only;
  app.add_option("--kit", g_kit, "Path to the i3dkit binary (criterion 10)");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  set_num_threads(1);

  const std::vector<std::pair<std::string, Outcome (*)()>> criteria = {
      {"boring-video fixed point", fixed_point},
      {"inflation weight rule", weight_rule},
      {"parameter counts", param_counts},
      {"temporal footprints", footprints},
      {"primitive oracles and gradients", primitives},
      {"receptive fields", receptive_fields},
      {"TV-L1 flow", tvl1_flow},
      {"temporal structure", temporal_structure},
      {"checkpoint and .flo round trip", round_trips},
      {"CLI determinism", cli_determinism},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  "
              << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
