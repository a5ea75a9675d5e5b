#include "i3d/graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "i3d/error.hpp"

namespace i3d {

std::string to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::kInput: return "input";
    case NodeKind::kConv: return "conv";
    case NodeKind::kPool: return "pool";
    case NodeKind::kBatchNorm: return "bn";
    case NodeKind::kRelu: return "relu";
    case NodeKind::kLinear: return "linear";
    case NodeKind::kLstm: return "lstm";
    case NodeKind::kConcat: return "concat";
    case NodeKind::kAdd: return "add";
    case NodeKind::kAverage: return "average";
    case NodeKind::kTemporalMean: return "temporal_mean";
    case NodeKind::kSoftmax: return "softmax";
  }
  return "?";
}

int GraphSpec::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("graph has no layer '" + id + "'");
  return it->second;
}

std::vector<ParamSpec> GraphSpec::node_params(int index) const {
  const LayerNode& n = node(index);
  auto in_shape = [&](size_t i) { return node(n.inputs[i]).shape; };
  std::vector<ParamSpec> out;
  switch (n.kind) {
    case NodeKind::kConv: {
      const int64_t ci = in_shape(0)[0];
      const auto& k = n.window.kernel;
      if (n.planar) {
        out.push_back({n.id + "/weight", {n.units, ci, k[1], k[2]}});
      } else {
        out.push_back({n.id + "/weight", {n.units, ci, k[0], k[1], k[2]}});
      }
      if (n.window.use_bias) out.push_back({n.id + "/bias", {n.units}});
      break;
    }
    case NodeKind::kBatchNorm: {
      const int64_t c = n.shape[0];
      out.push_back({n.id + "/gamma", {c}});
      out.push_back({n.id + "/beta", {c}});
      out.push_back({n.id + "/running_mean", {c}, false});
      out.push_back({n.id + "/running_var", {c}, false});
      break;
    }
    case NodeKind::kLinear: {
      const Shape s = in_shape(0);
      out.push_back({n.id + "/weight", {n.units, s[0] * s[2] * s[3]}});
      out.push_back({n.id + "/bias", {n.units}});
      break;
    }
    case NodeKind::kLstm: {
      const int64_t d = in_shape(0)[0], h = n.units;
      out.push_back({n.id + "/w_ih", {4 * h, d}});
      out.push_back({n.id + "/w_hh", {4 * h, h}});
      out.push_back({n.id + "/bias", {4 * h}});
      out.push_back({n.id + "/gamma_ih", {4 * h}});
      out.push_back({n.id + "/gamma_hh", {4 * h}});
      for (const char* buf : {"running_mean_ih", "running_var_ih", "running_mean_hh",
                              "running_var_hh"}) {
        out.push_back({n.id + "/" + buf, {4 * h}, false});
      }
      break;
    }
    default:
      break;
  }
  return out;
}

std::vector<ParamSpec> GraphSpec::params() const {
  std::vector<ParamSpec> all;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    auto p = node_params(static_cast<int>(i));
    all.insert(all.end(), p.begin(), p.end());
  }
  return all;
}

// ---------------------------------------------------------------------------

namespace {

std::string where(const LayerNode& n) { return "layer '" + n.id + "' (" + to_string(n.kind) + ")"; }

void require_inputs(const LayerNode& n, size_t lo, size_t hi) {
  if (n.inputs.size() < lo || n.inputs.size() > hi) {
    throw ConfigError(where(n) + ": wrong number of inputs (" + std::to_string(n.inputs.size()) +
                      ")");
  }
}

}  // namespace

int GraphBuilder::add(LayerNode n) {
  if (n.id.empty()) throw ConfigError("layer id must not be empty");
  if (graph_.index_.count(n.id)) throw ConfigError("duplicate layer id '" + n.id + "'");
  const int self = static_cast<int>(graph_.nodes_.size());
  for (int in : n.inputs) {
    if (in < 0 || in >= self) throw ConfigError(where(n) + ": input index out of order");
  }
  std::vector<Shape> ins;
  for (int in : n.inputs) ins.push_back(graph_.nodes_[static_cast<size_t>(in)].shape);

  switch (n.kind) {
    case NodeKind::kInput:
      require_inputs(n, 0, 0);
      if (n.shape.size() != 4 || shape_numel(n.shape) <= 0) {
        throw ConfigError(where(n) + ": input shape must be positive (C, T, H, W), got " +
                          shape_to_string(n.shape));
      }
      graph_.inputs_.push_back(self);
      break;
    case NodeKind::kConv:
    case NodeKind::kPool: {
      require_inputs(n, 1, 1);
      n.window.validate();
      if (n.kind == NodeKind::kConv && n.units <= 0) {
        throw ConfigError(where(n) + ": output channels must be positive");
      }
      if (n.planar && (n.window.kernel[0] != 1 || n.window.stride[0] != 1)) {
        throw ConfigError(where(n) + ": planar layers need temporal kernel and stride 1");
      }
      const Shape& s = ins[0];
      const auto plan = plan_window({1, s[0], s[1], s[2], s[3]}, n.window);
      for (const AxisPlan& a : plan) {
        if (a.out <= 0) {
          throw ConfigError(where(n) + ": input " + shape_to_string(s) +
                            " smaller than the window");
        }
      }
      n.shape = {n.kind == NodeKind::kConv ? n.units : s[0], plan[0].out, plan[1].out,
                 plan[2].out};
      break;
    }
    case NodeKind::kBatchNorm:
    case NodeKind::kRelu:
    case NodeKind::kSoftmax:
      require_inputs(n, 1, 1);
      n.shape = ins[0];
      break;
    case NodeKind::kLinear:
      require_inputs(n, 1, 1);
      if (n.units <= 0) throw ConfigError(where(n) + ": output features must be positive");
      n.shape = {n.units, ins[0][1], 1, 1};
      break;
    case NodeKind::kLstm:
      require_inputs(n, 1, 1);
      if (ins[0][2] != 1 || ins[0][3] != 1) {
        throw ConfigError(where(n) + ": expects a (D, T, 1, 1) feature sequence, got " +
                          shape_to_string(ins[0]));
      }
      if (n.units <= 0) throw ConfigError(where(n) + ": hidden size must be positive");
      n.shape = {n.units, ins[0][1], 1, 1};
      break;
    case NodeKind::kConcat: {
      require_inputs(n, 1, 64);
      Shape s = ins[0];
      for (size_t i = 1; i < ins.size(); ++i) {
        if (!std::equal(ins[i].begin() + 1, ins[i].end(), s.begin() + 1)) {
          throw ShapeError(where(n) + ": cannot concatenate " + shape_to_string(ins[i]) +
                           " with " + shape_to_string(ins[0]) + " along channels");
        }
        s[0] += ins[i][0];
      }
      n.shape = s;
      break;
    }
    case NodeKind::kAdd:
    case NodeKind::kAverage:
      require_inputs(n, 1, 64);
      for (const Shape& s : ins) {
        if (s != ins[0]) {
          throw ShapeError(where(n) + ": operand shapes differ, " + shape_to_string(s) +
                           " vs " + shape_to_string(ins[0]));
        }
      }
      n.shape = ins[0];
      break;
    case NodeKind::kTemporalMean:
      require_inputs(n, 1, 1);
      n.shape = {ins[0][0], 1, ins[0][2], ins[0][3]};
      break;
  }
  graph_.index_[n.id] = self;
  graph_.nodes_.push_back(std::move(n));
  return self;
}

int GraphBuilder::input(const std::string& id, Shape chw, const std::string& modality) {
  LayerNode n;
  n.id = id;
  n.kind = NodeKind::kInput;
  n.shape = std::move(chw);
  n.modality = modality;
  return add(std::move(n));
}

int GraphBuilder::conv(const std::string& id, int in, int64_t out_channels, const ConvSpec& spec,
                       bool planar, float init_std) {
  LayerNode n;
  n.id = id;
  n.kind = NodeKind::kConv;
  n.inputs = {in};
  n.window = spec;
  n.units = out_channels;
  n.planar = planar;
  n.init_std = init_std;
  return add(std::move(n));
}

int GraphBuilder::pool(const std::string& id, int in, PoolKind kind, const ConvSpec& window) {
  LayerNode n;
  n.id = id;
  n.kind = NodeKind::kPool;
  n.inputs = {in};
  n.pool = kind;
  n.window = window;
  n.window.use_bias = false;
  return add(std::move(n));
}

namespace {
LayerNode simple(const std::string& id, NodeKind kind, std::vector<int> ins) {
  LayerNode n;
  n.id = id;
  n.kind = kind;
  n.inputs = std::move(ins);
  return n;
}
}  // namespace

int GraphBuilder::batchnorm(const std::string& id, int in) {
  return add(simple(id, NodeKind::kBatchNorm, {in}));
}
int GraphBuilder::relu(const std::string& id, int in) {
  return add(simple(id, NodeKind::kRelu, {in}));
}
int GraphBuilder::linear(const std::string& id, int in, int64_t units, bool classifier,
                         float init_std) {
  LayerNode n = simple(id, NodeKind::kLinear, {in});
  n.units = units;
  n.classifier = classifier;
  n.init_std = init_std;
  return add(std::move(n));
}
int GraphBuilder::lstm(const std::string& id, int in, int64_t hidden) {
  LayerNode n = simple(id, NodeKind::kLstm, {in});
  n.units = hidden;
  return add(std::move(n));
}
int GraphBuilder::concat(const std::string& id, std::vector<int> ins) {
  return add(simple(id, NodeKind::kConcat, std::move(ins)));
}
int GraphBuilder::add_nodes(const std::string& id, std::vector<int> ins) {
  return add(simple(id, NodeKind::kAdd, std::move(ins)));
}
int GraphBuilder::average(const std::string& id, std::vector<int> ins) {
  return add(simple(id, NodeKind::kAverage, std::move(ins)));
}
int GraphBuilder::temporal_mean(const std::string& id, int in) {
  return add(simple(id, NodeKind::kTemporalMean, {in}));
}
int GraphBuilder::softmax(const std::string& id, int in) {
  return add(simple(id, NodeKind::kSoftmax, {in}));
}

int GraphBuilder::conv_unit(const std::string& id, int in, int64_t out_channels,
                            const ConvSpec& spec, bool planar, float init_std) {
  const int c = conv(id, in, out_channels, spec, planar, init_std);
  const int b = batchnorm(id + "/bn", c);
  return relu(id + "/relu", b);
}

GraphSpec GraphBuilder::finish(int output) {
  if (output < 0 || output >= static_cast<int>(graph_.nodes_.size())) {
    throw ConfigError("graph output index out of range");
  }
  if (graph_.inputs_.empty()) throw ConfigError("graph has no input layer");
  graph_.output_ = output;
  return std::move(graph_);
}

// ---------------------------------------------------------------------------

std::string to_string(Family family) {
  switch (family) {
    case Family::kLstm: return "lstm";
    case Family::kC3d: return "c3d";
    case Family::kTwoStream: return "two_stream";
    case Family::kFused3d: return "fused_3d";
    case Family::kI3d: return "i3d";
    case Family::kInception2d: return "inception2d";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "lstm") return Family::kLstm;
  if (s == "c3d" || s == "c3d_like") return Family::kC3d;
  if (s == "two_stream") return Family::kTwoStream;
  if (s == "fused3d" || s == "fused_3d" || s == "3d_fused") return Family::kFused3d;
  if (s == "i3d") return Family::kI3d;
  if (s == "inception2d" || s == "inception_v1") return Family::kInception2d;
  throw ConfigError("unknown family '" + name +
                    "' (expected lstm, c3d, two-stream, fused3d, i3d or inception2d)");
}

ArchConfig ArchConfig::defaults(Family family) {
  ArchConfig c;
  c.family = family;
  switch (family) {
    case Family::kLstm: c.frames = 25; break;
    case Family::kC3d: c.frames = 16; c.height = c.width = 112; break;
    case Family::kTwoStream: c.frames = 1; break;
    case Family::kFused3d: c.frames = 5; break;
    case Family::kI3d: c.frames = 64; break;
    case Family::kInception2d: c.num_classes = 1000; break;
  }
  return c;
}

int64_t scale_channels(int64_t channels, double multiplier) {
  if (!(multiplier > 0.0) || multiplier > 1.0) {
    throw ConfigError("width multiplier must lie in (0, 1], got " + std::to_string(multiplier));
  }
  const double scaled = std::ceil(multiplier * static_cast<double>(channels) - 1e-9);
  return std::max<int64_t>(1, static_cast<int64_t>(scaled));
}

namespace {

void check_config(const ArchConfig& c) {
  if (c.num_classes < 1) throw ConfigError("num_classes must be at least 1");
  scale_channels(1, c.width_multiplier);
  if (c.frames < 1 || c.height < 1 || c.width < 1 || c.channels < 1) {
    throw ConfigError("input geometry must be positive");
  }
  if (!(c.fps > 0.0)) throw ConfigError("fps must be positive");
}

bool toy(const ArchConfig& c) { return c.toy_geometry || c.width_multiplier < 1.0; }

// Inception-V1 branch widths: 1x1, 3x3 reduce, 3x3, "5x5" reduce, "5x5", pool proj.
struct MixedWidths {
  const char* name;
  int64_t b0, b1a, b1b, b2a, b2b, b3;
};

constexpr MixedWidths kMixed3[] = {{"inception_3a", 64, 96, 128, 16, 32, 32},
                                   {"inception_3b", 128, 128, 192, 32, 96, 64}};
constexpr MixedWidths kMixed4[] = {{"inception_4a", 192, 96, 208, 16, 48, 64},
                                   {"inception_4b", 160, 112, 224, 24, 64, 64},
                                   {"inception_4c", 128, 128, 256, 24, 64, 64},
                                   {"inception_4d", 112, 144, 288, 32, 64, 64},
                                   {"inception_4e", 256, 160, 320, 32, 128, 128}};
constexpr MixedWidths kMixed5[] = {{"inception_5a", 256, 160, 320, 32, 128, 128},
                                   {"inception_5b", 384, 192, 384, 48, 128, 128}};

// Windows of one Inception-V1 tower, either per-frame or inflated.
struct TowerWindows {
  bool planar;
  ConvSpec conv(int k, int s) const { return planar ? ConvSpec::planar(k, s) : ConvSpec::cube(k, s); }
  ConvSpec early_pool() const {
    ConvSpec w = ConvSpec::planar(3, 2);  // 1x3x3, stride (1, 2, 2) in both cases
    return w;
  }
  ConvSpec late_pool(int k) const { return conv(k, 2); }
  ConvSpec branch_pool() const { return conv(3, 1); }
};

int mixed(GraphBuilder& b, int in, const std::string& prefix, const MixedWidths& m, double width,
          const TowerWindows& w) {
  const std::string id = prefix + m.name;
  auto sc = [&](int64_t c) { return scale_channels(c, width); };
  const int b0 = b.conv_unit(id + "/b0_1x1", in, sc(m.b0), w.conv(1, 1), w.planar);
  int b1 = b.conv_unit(id + "/b1_1x1", in, sc(m.b1a), w.conv(1, 1), w.planar);
  b1 = b.conv_unit(id + "/b1_3x3", b1, sc(m.b1b), w.conv(3, 1), w.planar);
  int b2 = b.conv_unit(id + "/b2_1x1", in, sc(m.b2a), w.conv(1, 1), w.planar);
  b2 = b.conv_unit(id + "/b2_3x3", b2, sc(m.b2b), w.conv(3, 1), w.planar);
  int b3 = b.pool(id + "/b3_pool", in, PoolKind::kMax, w.branch_pool());
  b3 = b.conv_unit(id + "/b3_1x1", b3, sc(m.b3), w.conv(1, 1), w.planar);
  return b.concat(id, {b0, b1, b2, b3});
}

void check_spatial(const ArchConfig& c) {
  if (c.height < 32 || c.width < 32) {
    throw ConfigError("input " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                      " is smaller than the network's total spatial downsampling (32)");
  }
}

// Inception-V1 from the input through inception_5b. Returns the last mixed
// block.
int inception_trunk(GraphBuilder& b, int in, const std::string& prefix, double width,
                    const TowerWindows& w) {
  auto sc = [&](int64_t c) { return scale_channels(c, width); };
  int x = b.conv_unit(prefix + "conv1", in, sc(64), w.conv(7, 2), w.planar);
  x = b.pool(prefix + "pool1", x, PoolKind::kMax, w.early_pool());
  x = b.conv_unit(prefix + "conv2", x, sc(64), w.conv(1, 1), w.planar);
  x = b.conv_unit(prefix + "conv3", x, sc(192), w.conv(3, 1), w.planar);
  x = b.pool(prefix + "pool2", x, PoolKind::kMax, w.early_pool());
  for (const auto& m : kMixed3) x = mixed(b, x, prefix, m, width, w);
  x = b.pool(prefix + "pool3", x, PoolKind::kMax, w.late_pool(3));
  for (const auto& m : kMixed4) x = mixed(b, x, prefix, m, width, w);
  x = b.pool(prefix + "pool4", x, PoolKind::kMax, w.late_pool(2));
  for (const auto& m : kMixed5) x = mixed(b, x, prefix, m, width, w);
  return x;
}

// Final average pool: nominal 7x7 spatially (2 frames when inflated), capped
// at the available feature map.
int final_avgpool(GraphBuilder& b, int in, const std::string& prefix, bool planar) {
  const Shape& s = b.node(in).shape;
  ConvSpec w;
  w.kernel = {planar ? 1 : static_cast<int>(std::min<int64_t>(2, s[1])),
              static_cast<int>(std::min<int64_t>(7, s[2])),
              static_cast<int>(std::min<int64_t>(7, s[3]))};
  w.padding = {Padding::kValid, Padding::kValid, Padding::kValid};
  return b.pool(prefix + "avgpool", in, PoolKind::kAvg, w);
}

// avgpool -> per-step classifier -> temporal mean.
int classifier_head(GraphBuilder& b, int in, const std::string& prefix, int64_t classes,
                    bool planar) {
  const int p = final_avgpool(b, in, prefix, planar);
  const int logits = b.linear(prefix + "logits", p, classes, true);
  return b.temporal_mean(prefix + "logits_mean", logits);
}

int64_t flow_channels(const ArchConfig& c) {
  if (c.flow_frames < 1) throw ConfigError("flow_frames must be at least 1");
  return 2 * c.flow_frames;
}

}  // namespace

GraphSpec build_inception_v1_2d(const ArchConfig& config) {
  check_config(config);
  check_spatial(config);
  GraphBuilder b("inception2d");
  const TowerWindows w{true};
  const int in = b.input("input", {config.channels, config.frames, config.height, config.width});
  const int x = inception_trunk(b, in, "", config.width_multiplier, w);
  return b.finish(classifier_head(b, x, "", config.num_classes, true));
}

GraphSpec build_i3d(const ArchConfig& config) {
  check_config(config);
  check_spatial(config);
  if (config.frames < 8) {
    throw ConfigError("i3d needs at least 8 frames (total temporal downsampling), got " +
                      std::to_string(config.frames));
  }
  GraphBuilder b("i3d");
  const TowerWindows w{false};
  auto tower = [&](const std::string& prefix, int64_t channels, const std::string& modality) {
    const int in = b.input(prefix + "input", {channels, config.frames, config.height, config.width},
                           modality);
    const int x = inception_trunk(b, in, prefix, config.width_multiplier, w);
    return classifier_head(b, x, prefix, config.num_classes, false);
  };
  switch (config.streams) {
    case Streams::kRgb: return b.finish(tower("", config.channels, "rgb"));
    case Streams::kFlow: return b.finish(tower("", 2, "flow"));
    case Streams::kBoth: break;
  }
  const int rgb = b.softmax("rgb/prob", tower("rgb/", config.channels, "rgb"));
  const int flow = b.softmax("flow/prob", tower("flow/", 2, "flow"));
  return b.finish(b.average("prediction", {rgb, flow}));
}

GraphSpec build_c3d_like(const ArchConfig& config) {
  check_config(config);
  if (!toy(config) && (config.frames != 16 || config.height != 112 || config.width != 112)) {
    throw ConfigError("c3d expects 16x112x112 clips at full scale, got " +
                      std::to_string(config.frames) + "x" + std::to_string(config.height) + "x" +
                      std::to_string(config.width) + " (set toy geometry to override)");
  }
  GraphBuilder b("c3d");
  auto sc = [&](int64_t c) { return scale_channels(c, config.width_multiplier); };
  int x = b.input("input", {config.channels, config.frames, config.height, config.width});
  const ConvSpec k3 = ConvSpec::cube(3, 1);
  const ConvSpec p2 = ConvSpec::cube(2, 2);
  x = b.conv_unit("conv1a", x, sc(64), k3);
  x = b.pool("pool1", x, PoolKind::kMax, p2);
  x = b.conv_unit("conv2a", x, sc(128), k3);
  x = b.pool("pool2", x, PoolKind::kMax, p2);
  x = b.conv_unit("conv3a", x, sc(256), k3);
  x = b.conv_unit("conv3b", x, sc(256), k3);
  x = b.pool("pool3", x, PoolKind::kMax, p2);
  x = b.conv_unit("conv4a", x, sc(512), k3);
  x = b.conv_unit("conv4b", x, sc(512), k3);
  x = b.pool("pool4", x, PoolKind::kMax, p2);
  x = b.conv_unit("conv5a", x, sc(512), k3);
  x = b.conv_unit("conv5b", x, sc(512), k3);
  x = b.pool("pool5", x, PoolKind::kMax, p2);
  for (const char* fc : {"fc6", "fc7"}) {
    x = b.linear(fc, x, sc(4096));
    x = b.batchnorm(std::string(fc) + "/bn", x);
    x = b.relu(std::string(fc) + "/relu", x);
  }
  x = b.linear("logits", x, config.num_classes, true);
  return b.finish(b.temporal_mean("logits_mean", x));
}

GraphSpec build_two_stream(const ArchConfig& config) {
  check_config(config);
  check_spatial(config);
  GraphBuilder b("two_stream");
  const TowerWindows w{true};
  auto tower = [&](const std::string& prefix, int64_t channels, const std::string& modality) {
    const int in = b.input(prefix + "input", {channels, 1, config.height, config.width}, modality);
    const int x = inception_trunk(b, in, prefix, config.width_multiplier, w);
    return b.softmax(prefix + "prob", classifier_head(b, x, prefix, config.num_classes, true));
  };
  const int rgb = tower("rgb/", config.channels, "rgb");
  const int flow = tower("flow/", flow_channels(config), "flow");
  return b.finish(b.average("prediction", {rgb, flow}));
}

GraphSpec build_3d_fused(const ArchConfig& config) {
  check_config(config);
  check_spatial(config);
  GraphBuilder b("fused_3d");
  const TowerWindows w{true};
  auto tower = [&](const std::string& prefix, int64_t channels, const std::string& modality) {
    const int in =
        b.input(prefix + "input", {channels, config.frames, config.height, config.width}, modality);
    return inception_trunk(b, in, prefix, config.width_multiplier, w);
  };
  const int rgb = tower("rgb/", config.channels, "rgb");
  const int flow = tower("flow/", flow_channels(config), "flow");
  const Shape& grid = b.node(rgb).shape;
  if (!toy(config) && (grid[1] != 5 || grid[2] != 7 || grid[3] != 7)) {
    throw ConfigError("3d-fused expects 5x7x7 tower feature grids at full scale, got " +
                      shape_to_string({grid[1], grid[2], grid[3]}));
  }
  constexpr float kNewLayerStd = 0.01f;
  int x = b.concat("fusion/concat", {rgb, flow});
  x = b.conv_unit("fusion/conv", x, scale_channels(512, config.width_multiplier),
                  ConvSpec::cube(3, 1), false, kNewLayerStd);
  x = b.pool("fusion/pool", x, PoolKind::kMax, ConvSpec::cube(3, 2));
  const Shape& s = b.node(x).shape;
  ConvSpec global;
  global.kernel = {static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3])};
  global.padding = {Padding::kValid, Padding::kValid, Padding::kValid};
  x = b.pool("fusion/avgpool", x, PoolKind::kAvg, global);
  x = b.linear("fusion/logits", x, config.num_classes, true, kNewLayerStd);
  return b.finish(b.temporal_mean("fusion/logits_mean", x));
}

GraphSpec build_lstm(const ArchConfig& config) {
  check_config(config);
  check_spatial(config);
  GraphBuilder b("lstm");
  const TowerWindows w{true};
  const int in = b.input("input", {config.channels, config.frames, config.height, config.width});
  int x = inception_trunk(b, in, "", config.width_multiplier, w);
  x = final_avgpool(b, x, "", true);
  x = b.lstm("lstm", x, scale_channels(512, config.width_multiplier));
  return b.finish(b.linear("logits", x, config.num_classes, true));
}

GraphSpec build_graph(const ArchConfig& config) {
  switch (config.family) {
    case Family::kLstm: return build_lstm(config);
    case Family::kC3d: return build_c3d_like(config);
    case Family::kTwoStream: return build_two_stream(config);
    case Family::kFused3d: return build_3d_fused(config);
    case Family::kI3d: return build_i3d(config);
    case Family::kInception2d: return build_inception_v1_2d(config);
  }
  throw ConfigError("unknown family");
}

GraphSpec with_input_frames(const GraphSpec& graph, int64_t frames) {
  GraphBuilder b(graph.family);
  for (LayerNode n : graph.nodes()) {
    if (n.kind == NodeKind::kInput) n.shape[1] = frames;
    b.add(std::move(n));
  }
  return b.finish(graph.output());
}

// ---------------------------------------------------------------------------

int64_t count_params(const GraphSpec& graph) {
  int64_t total = 0;
  for (const ParamSpec& p : graph.params()) {
    if (p.trainable) total += shape_numel(p.shape);
  }
  return total;
}

double temporal_footprint(int64_t frames_used, int64_t subsample_stride, double fps) {
  if (frames_used < 0 || subsample_stride < 1 || !(fps > 0.0)) {
    throw ConfigError("footprint needs frames >= 0, stride >= 1 and fps > 0");
  }
  return static_cast<double>(frames_used * subsample_stride) / fps;
}

namespace {

// Field of a node's output with an explicit axis window applied to `in`.
ReceptiveField through_window(const ReceptiveField& in, const std::array<int, 3>& kernel,
                              const std::array<int, 3>& stride,
                              const std::array<int64_t, 3>& pad_lo) {
  ReceptiveField r;
  for (int a = 0; a < 3; ++a) {
    r.start[a] = in.start[a] - pad_lo[a] * in.jump[a];
    r.extent[a] = in.extent[a] + (kernel[a] - 1) * in.jump[a];
    r.jump[a] = in.jump[a] * stride[a];
  }
  return r;
}

ReceptiveField merge(const std::vector<ReceptiveField>& fields, const std::string& id) {
  ReceptiveField r = fields[0];
  for (const ReceptiveField& f : fields) {
    for (int a = 0; a < 3; ++a) {
      if (f.jump[a] != r.jump[a]) {
        throw ConfigError("layer '" + id + "' merges inputs with different strides");
      }
      const int64_t lo = std::min(r.start[a], f.start[a]);
      const int64_t hi = std::max(r.start[a] + r.extent[a], f.start[a] + f.extent[a]);
      r.start[a] = lo;
      r.extent[a] = hi - lo;
    }
  }
  return r;
}

// Fields for every node; nullopt-like flag marks undefined ones.
struct FieldTable {
  std::vector<ReceptiveField> field;
  std::vector<bool> defined;
};

FieldTable compute_fields(const GraphSpec& g) {
  FieldTable t{std::vector<ReceptiveField>(g.size()), std::vector<bool>(g.size(), false)};
  for (size_t i = 0; i < g.size(); ++i) {
    const LayerNode& n = g.node(static_cast<int>(i));
    if (n.kind == NodeKind::kInput) {
      t.defined[i] = true;
      continue;
    }
    if (n.kind == NodeKind::kLstm) continue;
    bool ok = true;
    std::vector<ReceptiveField> ins;
    for (int in : n.inputs) {
      ok = ok && t.defined[static_cast<size_t>(in)];
      ins.push_back(t.field[static_cast<size_t>(in)]);
    }
    if (!ok) continue;
    const Shape& s0 = g.node(n.inputs[0]).shape;
    switch (n.kind) {
      case NodeKind::kConv:
      case NodeKind::kPool: {
        const auto plan = plan_window({1, s0[0], s0[1], s0[2], s0[3]}, n.window);
        t.field[i] = through_window(ins[0], n.window.kernel, n.window.stride,
                                    {plan[0].pad_lo, plan[1].pad_lo, plan[2].pad_lo});
        break;
      }
      case NodeKind::kLinear:
        // Dense over the whole (H, W) map of each step.
        t.field[i] = through_window(ins[0], {1, static_cast<int>(s0[2]), static_cast<int>(s0[3])},
                                    {1, 1, 1}, {0, 0, 0});
        break;
      case NodeKind::kTemporalMean:
        t.field[i] = through_window(ins[0], {static_cast<int>(s0[1]), 1, 1}, {1, 1, 1}, {0, 0, 0});
        break;
      case NodeKind::kConcat:
      case NodeKind::kAdd:
      case NodeKind::kAverage:
        t.field[i] = merge(ins, n.id);
        break;
      default:
        t.field[i] = ins[0];
        break;
    }
    t.defined[i] = true;
  }
  return t;
}

}  // namespace

ReceptiveField receptive_field(const GraphSpec& graph, const std::string& layer_id) {
  const int idx = graph.find(layer_id);
  const FieldTable t = compute_fields(graph);
  if (!t.defined[static_cast<size_t>(idx)]) {
    throw ConfigError("layer '" + layer_id +
                      "' has no finite receptive field (recurrent layer on its input path)");
  }
  return t.field[static_cast<size_t>(idx)];
}

std::vector<std::pair<std::string, ReceptiveField>> receptive_fields(const GraphSpec& graph) {
  const FieldTable t = compute_fields(graph);
  std::vector<std::pair<std::string, ReceptiveField>> out;
  for (size_t i = 0; i < graph.size(); ++i) {
    if (t.defined[i]) out.emplace_back(graph.node(static_cast<int>(i)).id, t.field[i]);
  }
  return out;
}

namespace {
std::string triple(const std::array<int, 3>& v) {
  return std::to_string(v[0]) + "x" + std::to_string(v[1]) + "x" + std::to_string(v[2]);
}
}  // namespace

std::string graph_summary(const GraphSpec& graph) {
  const FieldTable t = compute_fields(graph);
  std::vector<std::array<std::string, 7>> rows;
  rows.push_back({"layer", "kind", "kernel", "stride", "output", "rf(t,x,y)", "params"});
  for (size_t i = 0; i < graph.size(); ++i) {
    const LayerNode& n = graph.node(static_cast<int>(i));
    const bool windowed = n.kind == NodeKind::kConv || n.kind == NodeKind::kPool;
    int64_t params = 0;
    for (const ParamSpec& p : graph.node_params(static_cast<int>(i))) {
      if (p.trainable) params += shape_numel(p.shape);
    }
    std::string rf = "-";
    if (t.defined[i]) {
      const auto& e = t.field[i].extent;
      rf = std::to_string(e[0]) + "," + std::to_string(e[2]) + "," + std::to_string(e[1]);
    }
    std::string kind = to_string(n.kind);
    if (n.kind == NodeKind::kPool) kind = n.pool == PoolKind::kMax ? "maxpool" : "avgpool";
    rows.push_back({n.id, kind, windowed ? triple(n.window.kernel) : "-",
                    windowed ? triple(n.window.stride) : "-", shape_to_string(n.shape), rf,
                    std::to_string(params)});
  }
  std::array<size_t, 7> width{};
  for (const auto& r : rows) {
    for (size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    for (size_t c = 0; c < r.size(); ++c) {
      if (c + 1 == r.size()) {
        os << std::setw(static_cast<int>(width[c])) << std::right << r[c];
      } else {
        os << std::setw(static_cast<int>(width[c])) << std::left << r[c] << "  ";
      }
    }
    os << '\n';
  }
  os << "total trainable parameters: " << count_params(graph) << '\n';
  return os.str();
}

}  // namespace i3d
