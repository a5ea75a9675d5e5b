#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "i3d/checkpoint.hpp"
#include "i3d/graph.hpp"
#include "i3d/tensor.hpp"

namespace i3d {

// (Co, Ci, kH, kW) -> (Co, Ci, n, kH, kW), each temporal slice kernel2d / n.
// With rescale off the slices are copies of kernel2d.
Tensor inflate_kernel(const Tensor& kernel2d, int n, bool rescale = true);

// How each 2D window gains a temporal axis.
struct InflationRule {
  // Temporal extent of conv and downsampling max-pool windows; 0 uses the
  // spatial extent (N x N becomes N x N x N).
  int uniform_extent = 0;
  // true: temporal stride equals the spatial stride; false: stride 1.
  bool match_stride = true;
  // Downsampling max pools, counted from the input of each tower, that keep a
  // temporal extent and stride of 1.
  int unpooled_leading_maxpools = 2;
  // Temporal extent of average pools (capped at the available length).
  int final_avgpool_extent = 2;
  Padding temporal_padding = Padding::kSame;
  // Declared clip length of the inflated graph's inputs.
  int64_t frames = 64;
  // Divide replicated kernels by their temporal extent.
  bool rescale = true;
  // Per-layer temporal extent / stride, keyed by layer id.
  std::map<std::string, int> extent_overrides;
  std::map<std::string, int> stride_overrides;

  // The inflated Inception-V1 pacing.
  static InflationRule i3d();
  // Every temporal extent and stride 1: a per-frame copy of the 2D network.
  static InflationRule degenerate();

  // key = value text: extent, stride (match|1), unpooled_maxpools,
  // avgpool_extent, temporal_padding (same|valid), frames, rescale,
  // extent.<layer>, stride.<layer>. Unknown keys raise ConfigError.
  static InflationRule parse(const std::string& text);
  std::string to_text() const;
};

// Topology only.
GraphSpec inflate_topology(const GraphSpec& graph2d, const InflationRule& rule);

struct Inflated {
  GraphSpec graph;
  Checkpoint weights;
};

// Convolutions inflated with inflate_kernel; batch norm, linear and bias
// tensors copied unchanged. Raises ConfigError on LSTM layers and on a missing
// 2D tensor, naming it.
Inflated inflate_graph(const GraphSpec& graph2d, const Checkpoint& weights2d,
                       const InflationRule& rule);

// (C, H, W) image -> (1, C, T, H, W) clip of identical frames.
Tensor make_boring_video(const Tensor& image, int64_t frames);

struct LayerDeviation {
  std::string layer;
  int64_t frames = 0;      // boring-video length used
  int64_t position = 0;    // temporal output index compared
  double max_deviation = 0.0;
  // Activation scale the tolerance is applied at: max(1, max |2D activation|)
  // for hidden layers, 1 for classifier outputs.
  double scale = 1.0;
  bool passed = false;
};

struct FixedPointReport {
  std::vector<LayerDeviation> layers;
  double tolerance = 0.0;
  int64_t frames = 0;
  double max_logit_deviation = 0.0;  // over classifier layers
  bool passed = false;

  // Text table: layer, T, max deviation, scale, pass/fail.
  std::string to_text() const;
};

// Smallest boring-video length for which every compared layer of `graph3d`
// has an output position whose temporal receptive field lies inside the clip.
int64_t required_frames(const GraphSpec& graph3d);

// Runs the 2D graph on `image` and the 3D graph on its boring video, both in
// inference mode, and compares every layer present in both graphs at the
// central output position whose temporal receptive field lies inside the clip.
// A layer passes when its deviation is at most tolerance * scale; classifier
// outputs are held to the absolute tolerance. Temporal means and their
// descendants are skipped. `frames` = 0 picks twice the temporal receptive
// field, or one frame when that field is 1. A clip shorter than
// required_frames raises ConfigError citing the required length.
FixedPointReport verify_fixed_point(const GraphSpec& graph2d, const Checkpoint& weights2d,
                                    const GraphSpec& graph3d, const Checkpoint& weights3d,
                                    const Tensor& image, double tolerance = 1e-4,
                                    int64_t frames = 0);

// Mean over the input-channel axis of a (Co, Ci, ...) kernel, replicated to
// `new_in_channels` and scaled by Ci / new_in_channels.
Tensor adapt_input_conv(const Tensor& kernel, int64_t new_in_channels);

}  // namespace i3d
