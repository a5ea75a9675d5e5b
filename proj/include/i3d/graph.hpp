#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "i3d/ops.hpp"
#include "i3d/tensor.hpp"

namespace i3d {

enum class NodeKind {
  kInput,
  kConv,
  kPool,
  kBatchNorm,
  kRelu,
  kLinear,
  kLstm,
  kConcat,
  kAdd,
  kAverage,
  kTemporalMean,
  kSoftmax,
};

std::string to_string(NodeKind kind);

// One layer of a network. Activations are (N, C, T, H, W) everywhere; `shape`
// holds (C, T, H, W) at the graph's declared input geometry.
struct LayerNode {
  std::string id;
  NodeKind kind = NodeKind::kInput;
  std::vector<int> inputs;

  ConvSpec window;                 // conv and pool
  PoolKind pool = PoolKind::kMax;  // pool
  int64_t units = 0;               // conv/linear output channels, lstm hidden size
  bool planar = false;             // conv weight stored (Co, Ci, kH, kW)
  bool classifier = false;         // final linear layer of a tower
  float init_std = 0.0f;           // > 0: Gaussian init with this sigma
  std::string modality;            // input nodes: "rgb" or "flow"

  Shape shape;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;
};

// Directed acyclic network description, immutable once built.
class GraphSpec {
 public:
  std::string family;

  const std::vector<LayerNode>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  const LayerNode& node(int index) const { return nodes_.at(static_cast<size_t>(index)); }
  // Throws ConfigError when the id is unknown.
  int find(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const LayerNode& node(const std::string& id) const { return node(find(id)); }

  const std::vector<int>& inputs() const { return inputs_; }
  int output() const { return output_; }

  std::vector<ParamSpec> params() const;
  std::vector<ParamSpec> node_params(int index) const;

 private:
  friend class GraphBuilder;
  std::vector<LayerNode> nodes_;
  std::unordered_map<std::string, int> index_;
  std::vector<int> inputs_;
  int output_ = -1;
};

// Appends nodes in topological order, inferring shapes and checking that
// channel counts agree with the predecessors.
class GraphBuilder {
 public:
  explicit GraphBuilder(std::string family) { graph_.family = std::move(family); }

  // Generic append; kind-specific fields of `node` must be filled and
  // `node.inputs` must reference earlier nodes. Returns the new index.
  int add(LayerNode node);

  int input(const std::string& id, Shape chw, const std::string& modality = "rgb");
  int conv(const std::string& id, int in, int64_t out_channels, const ConvSpec& spec,
           bool planar = false, float init_std = 0.0f);
  int pool(const std::string& id, int in, PoolKind kind, const ConvSpec& window);
  int batchnorm(const std::string& id, int in);
  int relu(const std::string& id, int in);
  int linear(const std::string& id, int in, int64_t units, bool classifier = false,
             float init_std = 0.0f);
  int lstm(const std::string& id, int in, int64_t hidden);
  int concat(const std::string& id, std::vector<int> ins);
  int add_nodes(const std::string& id, std::vector<int> ins);
  int average(const std::string& id, std::vector<int> ins);
  int temporal_mean(const std::string& id, int in);
  int softmax(const std::string& id, int in);

  // conv -> bn -> relu, the bn/relu ids suffixed "/bn" and "/relu".
  int conv_unit(const std::string& id, int in, int64_t out_channels, const ConvSpec& spec,
                bool planar = false, float init_std = 0.0f);

  const LayerNode& node(int index) const { return graph_.node(index); }
  GraphSpec finish(int output);

 private:
  GraphSpec graph_;
};

// ---------------------------------------------------------------------------
// Architecture zoo.

enum class Family { kLstm, kC3d, kTwoStream, kFused3d, kI3d, kInception2d };

std::string to_string(Family family);
// Accepts the CLI spellings (two-stream, fused3d, ...) and the enum names.
Family parse_family(const std::string& name);

enum class Streams { kRgb, kFlow, kBoth };

struct ArchConfig {
  Family family = Family::kInception2d;
  int64_t num_classes = 400;
  double width_multiplier = 1.0;
  int64_t frames = 1;     // RGB frames per clip (per step for the LSTM)
  int64_t height = 224;
  int64_t width = 224;
  int64_t channels = 3;
  int64_t flow_frames = 10;  // two-stream and fused: flow frames stacked per input
  double fps = 25.0;
  Streams streams = Streams::kBoth;  // i3d only
  // Allows geometry other than the full-scale input for families that pin it.
  bool toy_geometry = false;

  // Full-scale geometry for each family.
  static ArchConfig defaults(Family family);
};

// ceil(multiplier * channels), at least 1.
int64_t scale_channels(int64_t channels, double multiplier);

GraphSpec build_inception_v1_2d(const ArchConfig& config);
GraphSpec build_i3d(const ArchConfig& config);
GraphSpec build_c3d_like(const ArchConfig& config);
GraphSpec build_two_stream(const ArchConfig& config);
GraphSpec build_3d_fused(const ArchConfig& config);
GraphSpec build_lstm(const ArchConfig& config);
GraphSpec build_graph(const ArchConfig& config);

// The same layers with every input declared `frames` long; shapes are
// re-inferred. Raises ConfigError when a window no longer fits.
GraphSpec with_input_frames(const GraphSpec& graph, int64_t frames);

// ---------------------------------------------------------------------------
// Analyzers.

// Trainable elements only: weights, biases, BN scale/shift, LSTM gains.
int64_t count_params(const GraphSpec& graph);

// (frames_used * subsample_stride) / fps, in seconds.
double temporal_footprint(int64_t frames_used, int64_t subsample_stride, double fps);

// Receptive field of one activation of a layer, axes ordered (T, H, W).
// `extent` is the size of the input window that can influence it, `jump` the
// cumulative stride, and `start` the input coordinate of the first window's
// low edge for output index 0 (negative when padding is involved).
struct ReceptiveField {
  std::array<int64_t, 3> extent{1, 1, 1};
  std::array<int64_t, 3> jump{1, 1, 1};
  std::array<int64_t, 3> start{0, 0, 0};
};

ReceptiveField receptive_field(const GraphSpec& graph, const std::string& layer_id);
// Every node that has a defined field, in graph order; nodes past an LSTM or
// outside any input path are skipped.
std::vector<std::pair<std::string, ReceptiveField>> receptive_fields(const GraphSpec& graph);

// Aligned text table: layer, kind, kernel, stride, output shape, RF, params.
std::string graph_summary(const GraphSpec& graph);

}  // namespace i3d
