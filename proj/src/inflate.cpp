#include "i3d/inflate.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "i3d/config.hpp"
#include "i3d/error.hpp"
#include "i3d/network.hpp"

namespace i3d {

Tensor inflate_kernel(const Tensor& kernel2d, int n, bool rescale) {
  if (n < 1) throw ConfigError("inflation extent must be at least 1, got " + std::to_string(n));
  if (kernel2d.rank() != 4) {
    throw ShapeError("inflate_kernel expects (Co, Ci, kH, kW), got " +
                     shape_to_string(kernel2d.shape()));
  }
  const int64_t co = kernel2d.dim(0), ci = kernel2d.dim(1), hw = kernel2d.dim(2) * kernel2d.dim(3);
  Tensor out({co, ci, n, kernel2d.dim(2), kernel2d.dim(3)});
  const float scale = rescale ? 1.0f / static_cast<float>(n) : 1.0f;
  for (int64_t oc = 0; oc < co * ci; ++oc) {
    const float* src = kernel2d.ptr() + oc * hw;
    for (int t = 0; t < n; ++t) {
      float* dst = out.ptr() + (oc * n + t) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * scale;
    }
  }
  return out;
}

InflationRule InflationRule::i3d() { return InflationRule{}; }

InflationRule InflationRule::degenerate() {
  InflationRule r;
  r.uniform_extent = 1;
  r.match_stride = false;
  r.final_avgpool_extent = 1;
  r.frames = 1;
  return r;
}

InflationRule InflationRule::parse(const std::string& text) {
  InflationRule r;
  for (const auto& [key, value] : parse_key_values(text)) {
    if (key == "extent") {
      r.uniform_extent = static_cast<int>(parse_int(key, value));
    } else if (key == "stride") {
      if (value == "match") {
        r.match_stride = true;
      } else if (value == "1") {
        r.match_stride = false;
      } else {
        throw ConfigError("stride: expected 'match' or '1', got '" + value + "'");
      }
    } else if (key == "unpooled_maxpools") {
      r.unpooled_leading_maxpools = static_cast<int>(parse_int(key, value));
    } else if (key == "avgpool_extent") {
      r.final_avgpool_extent = static_cast<int>(parse_int(key, value));
    } else if (key == "temporal_padding") {
      if (value == "same") {
        r.temporal_padding = Padding::kSame;
      } else if (value == "valid") {
        r.temporal_padding = Padding::kValid;
      } else {
        throw ConfigError("temporal_padding: expected same or valid, got '" + value + "'");
      }
    } else if (key == "frames") {
      r.frames = parse_int(key, value);
    } else if (key == "rescale") {
      r.rescale = parse_bool(key, value);
    } else if (key.rfind("extent.", 0) == 0 && key.size() > 7) {
      r.extent_overrides[key.substr(7)] = static_cast<int>(parse_int(key, value));
    } else if (key.rfind("stride.", 0) == 0 && key.size() > 7) {
      r.stride_overrides[key.substr(7)] = static_cast<int>(parse_int(key, value));
    } else {
      throw ConfigError("unknown inflation rule key '" + key + "'");
    }
  }
  if (r.uniform_extent < 0 || r.unpooled_leading_maxpools < 0 || r.final_avgpool_extent < 1 ||
      r.frames < 1) {
    throw ConfigError("inflation rule values must be non-negative (extents and frames >= 1)");
  }
  for (const auto& [layer, n] : r.extent_overrides) {
    if (n < 1) throw ConfigError("extent." + layer + " must be at least 1");
  }
  for (const auto& [layer, s] : r.stride_overrides) {
    if (s < 1) throw ConfigError("stride." + layer + " must be at least 1");
  }
  return r;
}

std::string InflationRule::to_text() const {
  std::ostringstream os;
  os << "extent = " << uniform_extent << '\n'
     << "stride = " << (match_stride ? "match" : "1") << '\n'
     << "unpooled_maxpools = " << unpooled_leading_maxpools << '\n'
     << "avgpool_extent = " << final_avgpool_extent << '\n'
     << "temporal_padding = " << (temporal_padding == Padding::kSame ? "same" : "valid") << '\n'
     << "frames = " << frames << '\n'
     << "rescale = " << (rescale ? "true" : "false") << '\n';
  for (const auto& [layer, n] : extent_overrides) os << "extent." << layer << " = " << n << '\n';
  for (const auto& [layer, s] : stride_overrides) os << "stride." << layer << " = " << s << '\n';
  return os.str();
}

GraphSpec inflate_topology(const GraphSpec& graph2d, const InflationRule& rule) {
  GraphBuilder b(graph2d.family == "inception2d" ? "i3d" : graph2d.family + "_inflated");
  // Downsampling max pools seen so far, per input tower.
  std::vector<int> tower(graph2d.size(), 0);
  std::vector<int> pools_seen(graph2d.size(), 0);
  for (size_t i = 0; i < graph2d.size(); ++i) {
    LayerNode n = graph2d.node(static_cast<int>(i));
    tower[i] = n.kind == NodeKind::kInput ? static_cast<int>(i) : tower[static_cast<size_t>(n.inputs[0])];
    auto extent_for = [&](int spatial) {
      auto it = rule.extent_overrides.find(n.id);
      if (it != rule.extent_overrides.end()) return it->second;
      return rule.uniform_extent > 0 ? rule.uniform_extent : spatial;
    };
    auto stride_for = [&](int spatial) {
      auto it = rule.stride_overrides.find(n.id);
      if (it != rule.stride_overrides.end()) return it->second;
      return rule.match_stride ? spatial : 1;
    };
    switch (n.kind) {
      case NodeKind::kInput:
        n.shape[1] = rule.frames;
        break;
      case NodeKind::kLstm:
        throw ConfigError("layer '" + n.id + "' is an LSTM and cannot be inflated");
      case NodeKind::kConv:
        n.window.kernel[0] = extent_for(n.window.kernel[1]);
        n.window.stride[0] = stride_for(n.window.stride[1]);
        n.window.padding[0] = rule.temporal_padding;
        n.planar = false;
        break;
      case NodeKind::kPool: {
        const Shape& in = b.node(n.inputs[0]).shape;
        if (n.pool == PoolKind::kAvg) {
          int k = static_cast<int>(std::min<int64_t>(rule.final_avgpool_extent, in[1]));
          if (rule.extent_overrides.count(n.id)) k = rule.extent_overrides.at(n.id);
          n.window.kernel[0] = k;
          n.window.stride[0] = stride_for(n.window.stride[1]);
          n.window.padding[0] = Padding::kValid;
          break;
        }
        const bool downsampling = n.window.stride[1] > 1 || n.window.stride[2] > 1;
        int& seen = pools_seen[static_cast<size_t>(tower[i])];
        if (downsampling && seen++ < rule.unpooled_leading_maxpools) {
          n.window.kernel[0] = rule.extent_overrides.count(n.id) ? rule.extent_overrides.at(n.id) : 1;
          n.window.stride[0] = rule.stride_overrides.count(n.id) ? rule.stride_overrides.at(n.id) : 1;
        } else {
          n.window.kernel[0] = extent_for(n.window.kernel[1]);
          n.window.stride[0] = stride_for(n.window.stride[1]);
        }
        n.window.padding[0] = rule.temporal_padding;
        break;
      }
      default:
        break;
    }
    b.add(std::move(n));
  }
  return b.finish(graph2d.output());
}

Inflated inflate_graph(const GraphSpec& graph2d, const Checkpoint& weights2d,
                       const InflationRule& rule) {
  Inflated r{inflate_topology(graph2d, rule), Checkpoint{}};
  r.weights.family = r.graph.family;
  for (const ParamSpec& p : graph2d.params()) {
    if (!weights2d.contains(p.name)) {
      throw ConfigError("missing 2D weight tensor '" + p.name + "'");
    }
  }
  check_weights(graph2d, weights2d);
  for (size_t i = 0; i < graph2d.size(); ++i) {
    const LayerNode& n2 = graph2d.node(static_cast<int>(i));
    const LayerNode& n3 = r.graph.node(static_cast<int>(i));
    for (const ParamSpec& p : graph2d.node_params(static_cast<int>(i))) {
      const Tensor& w = weights2d.get(p.name);
      const bool kernel = n2.kind == NodeKind::kConv && p.name == n2.id + "/weight";
      if (kernel && w.rank() == 4) {
        r.weights.add(p.name, inflate_kernel(w, n3.window.kernel[0], rule.rescale));
      } else if (kernel) {
        // Already 3D: only a temporal extent of 1 can be re-inflated.
        if (w.dim(2) != 1) {
          throw ConfigError("layer '" + n2.id + "' already has a temporal extent");
        }
        r.weights.add(p.name, inflate_kernel(w.reshaped({w.dim(0), w.dim(1), w.dim(3), w.dim(4)}),
                                             n3.window.kernel[0], rule.rescale));
      } else {
        r.weights.add(p.name, w);
      }
    }
  }
  check_weights(r.graph, r.weights);
  return r;
}

Tensor make_boring_video(const Tensor& image, int64_t frames) {
  if (image.rank() != 3) {
    throw ShapeError("boring video needs a (C, H, W) image, got " + shape_to_string(image.shape()));
  }
  if (frames < 1) throw ConfigError("boring video needs at least one frame");
  const int64_t c = image.dim(0), hw = image.dim(1) * image.dim(2);
  Tensor v({1, c, frames, image.dim(1), image.dim(2)});
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t t = 0; t < frames; ++t) {
      std::copy(image.ptr() + ch * hw, image.ptr() + (ch + 1) * hw, v.ptr() + (ch * frames + t) * hw);
    }
  return v;
}

// ---------------------------------------------------------------------------

namespace {

// Layers of graph3d compared against graph2d: shared ids, excluding inputs and
// anything at or after a temporal mean.
std::vector<int> compared_layers(const GraphSpec& g2, const GraphSpec& g3) {
  std::vector<bool> after_mean(g3.size(), false);
  std::vector<int> out;
  for (size_t i = 0; i < g3.size(); ++i) {
    const LayerNode& n = g3.node(static_cast<int>(i));
    bool tainted = n.kind == NodeKind::kTemporalMean;
    for (int in : n.inputs) tainted = tainted || after_mean[static_cast<size_t>(in)];
    after_mean[i] = tainted;
    if (tainted || n.kind == NodeKind::kInput || !g2.contains(n.id)) continue;
    out.push_back(static_cast<int>(i));
  }
  return out;
}

// Output index closest to the centre whose temporal field lies in [0, frames),
// or -1.
int64_t clean_position(const ReceptiveField& f, int64_t out_len, int64_t frames) {
  const int64_t s = f.start[0], j = f.jump[0], e = f.extent[0];
  int64_t lo = s >= 0 ? 0 : (-s + j - 1) / j;
  const int64_t room = frames - e - s;
  if (room < 0) return -1;
  int64_t hi = std::min(room / j, out_len - 1);
  lo = std::max<int64_t>(lo, 0);
  if (lo > hi) return -1;
  const int64_t centre = (out_len - 1) / 2;
  return std::clamp(centre, lo, hi);
}

struct Positions {
  std::vector<int64_t> index;  // per compared layer, -1 when none
  std::string missing;         // first layer without a clean position
};

Positions clean_positions(const GraphSpec& g3, const std::vector<int>& layers, int64_t frames) {
  Positions p;
  GraphSpec sized;
  try {
    sized = with_input_frames(g3, frames);
  } catch (const ConfigError&) {
    p.missing = "input";
    return p;
  }
  const auto fields = receptive_fields(sized);
  std::unordered_map<std::string, ReceptiveField> by_id(fields.begin(), fields.end());
  for (int idx : layers) {
    const LayerNode& n = sized.node(idx);
    auto it = by_id.find(n.id);
    const int64_t o = it == by_id.end() ? -1 : clean_position(it->second, n.shape[1], frames);
    p.index.push_back(o);
    if (o < 0 && p.missing.empty()) p.missing = n.id;
  }
  return p;
}

int64_t max_temporal_extent(const GraphSpec& g3, const std::vector<int>& layers) {
  const auto fields = receptive_fields(g3);
  std::unordered_map<std::string, ReceptiveField> by_id(fields.begin(), fields.end());
  int64_t e = 1;
  for (int idx : layers) {
    auto it = by_id.find(g3.node(idx).id);
    if (it != by_id.end()) e = std::max(e, it->second.extent[0]);
  }
  return e;
}

}  // namespace

int64_t required_frames(const GraphSpec& graph3d) {
  // Every layer id counts as compared here.
  std::vector<int> layers;
  std::vector<bool> after_mean(graph3d.size(), false);
  for (size_t i = 0; i < graph3d.size(); ++i) {
    const LayerNode& n = graph3d.node(static_cast<int>(i));
    bool tainted = n.kind == NodeKind::kTemporalMean || n.kind == NodeKind::kLstm;
    for (int in : n.inputs) tainted = tainted || after_mean[static_cast<size_t>(in)];
    after_mean[i] = tainted;
    if (!tainted && n.kind != NodeKind::kInput) layers.push_back(static_cast<int>(i));
  }
  const int64_t extent = max_temporal_extent(graph3d, layers);
  for (int64_t t = extent; t < 64 * extent + 64; ++t) {
    if (clean_positions(graph3d, layers, t).missing.empty()) return t;
  }
  throw ConfigError("no boring-video length gives every layer an interior output position");
}

FixedPointReport verify_fixed_point(const GraphSpec& graph2d, const Checkpoint& weights2d,
                                    const GraphSpec& graph3d, const Checkpoint& weights3d,
                                    const Tensor& image, double tolerance, int64_t frames) {
  if (graph2d.inputs().size() != 1 || graph3d.inputs().size() != 1) {
    throw ConfigError("fixed-point verification needs single-input graphs");
  }
  if (image.rank() != 3) {
    throw ShapeError("fixed-point verification needs a (C, H, W) image, got " +
                     shape_to_string(image.shape()));
  }
  const std::vector<int> layers = compared_layers(graph2d, graph3d);
  if (layers.empty()) throw ConfigError("the two graphs share no comparable layers");
  const int64_t extent = max_temporal_extent(graph3d, layers);
  // A purely spatial network needs a single frame.
  if (frames == 0) frames = extent == 1 ? 1 : 2 * extent;

  const Positions pos = clean_positions(graph3d, layers, frames);
  if (!pos.missing.empty()) {
    int64_t need = frames + 1;
    while (!clean_positions(graph3d, layers, need).missing.empty()) ++need;
    throw ConfigError("boring video of " + std::to_string(frames) +
                      " frames is too short: layer '" + pos.missing + "' needs at least " +
                      std::to_string(need) + " frames");
  }

  const Tensor image2d = make_boring_video(image, 1);
  const Tensor video = make_boring_video(image, frames);
  const ForwardPass p2 = forward(graph2d, weights2d, {image2d}, Mode::kInfer);
  const ForwardPass p3 = forward(graph3d, weights3d, {video}, Mode::kInfer);

  FixedPointReport report;
  report.tolerance = tolerance;
  report.frames = frames;
  report.passed = true;
  for (size_t k = 0; k < layers.size(); ++k) {
    const LayerNode& n = graph3d.node(layers[k]);
    const Tensor& a = p2.outputs[static_cast<size_t>(graph2d.find(n.id))];
    const Tensor& b = p3.outputs[static_cast<size_t>(layers[k])];
    if (a.dim(1) != b.dim(1) || a.dim(3) != b.dim(3) || a.dim(4) != b.dim(4)) {
      throw ShapeError("layer '" + n.id + "' differs in shape: " + shape_to_string(a.shape()) +
                       " vs " + shape_to_string(b.shape()));
    }
    const int64_t o = pos.index[k];
    const int64_t c = a.dim(1), hw = a.dim(3) * a.dim(4), t2 = a.dim(2), t3 = b.dim(2);
    double dev = 0.0, peak = 0.0;
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < hw; ++i) {
        const double ref = a[(ch * t2) * hw + i];
        const double d = std::abs(ref - b[(ch * t3 + o) * hw + i]);
        dev = std::isnan(d) ? INFINITY : std::max(dev, d);
        peak = std::max(peak, std::abs(ref));
      }
    const double scale = n.classifier ? 1.0 : std::max(1.0, peak);
    LayerDeviation row{n.id, frames, o, dev, scale, dev <= tolerance * scale};
    report.passed = report.passed && row.passed;
    if (n.classifier) report.max_logit_deviation = std::max(report.max_logit_deviation, dev);
    report.layers.push_back(std::move(row));
  }
  return report;
}

std::string FixedPointReport::to_text() const {
  size_t width = 5;
  for (const auto& r : layers) width = std::max(width, r.layer.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << "  " << std::right
     << std::setw(5) << "T" << "  " << std::setw(13) << "max_deviation" << "  " << std::setw(9)
     << "scale" << "  result\n";
  for (const auto& r : layers) {
    os << std::left << std::setw(static_cast<int>(width)) << r.layer << "  " << std::right
       << std::setw(5) << r.frames << "  " << std::setw(13) << std::scientific
       << std::setprecision(3) << r.max_deviation << "  " << std::setw(9) << std::fixed
       << std::setprecision(3) << r.scale << "  " << (r.passed ? "pass" : "FAIL") << '\n';
  }
  os << std::defaultfloat << "tolerance " << tolerance << ", max logit deviation "
     << max_logit_deviation << ": " << (passed ? "PASS" : "FAIL") << '\n';
  return os.str();
}

Tensor adapt_input_conv(const Tensor& kernel, int64_t new_in_channels) {
  if (new_in_channels < 1) throw ConfigError("adapted input conv needs at least one channel");
  if (kernel.rank() < 3) {
    throw ShapeError("adapt_input_conv expects (Co, Ci, ...), got " + shape_to_string(kernel.shape()));
  }
  const int64_t co = kernel.dim(0), ci = kernel.dim(1), inner = kernel.numel() / (co * ci);
  Shape shape = kernel.shape();
  shape[1] = new_in_channels;
  Tensor out(shape);
  const double scale = static_cast<double>(ci) / static_cast<double>(new_in_channels);
  for (int64_t o = 0; o < co; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double mean = 0.0;
      for (int64_t c = 0; c < ci; ++c) mean += kernel[(o * ci + c) * inner + i];
      mean /= static_cast<double>(ci);
      const float v = static_cast<float>(mean * scale);
      for (int64_t c = 0; c < new_in_channels; ++c) out[(o * new_in_channels + c) * inner + i] = v;
    }
  return out;
}

}  // namespace i3d
