#pragma once

#include <cstdint>
#include <vector>

#include "i3d/checkpoint.hpp"
#include "i3d/graph.hpp"
#include "i3d/ops.hpp"

namespace i3d {

// Weights for every parameter of `graph`: He-normal convolutions and hidden
// linear layers, N(0, 0.01^2) classifiers, the node's own sigma when it sets
// one, identity batch norms, LSTM gains of 0.1 and a forget-gate bias of 1.
Checkpoint init_weights(const GraphSpec& graph, uint64_t seed);

// Throws ConfigError naming the first parameter that is missing or has the
// wrong shape.
void check_weights(const GraphSpec& graph, const Checkpoint& weights);

// Activations of one forward pass, kept for the backward pass.
struct ForwardPass {
  Mode mode = Mode::kInfer;
  std::vector<Tensor> inputs;  // graph inputs, in graph.inputs() order
  std::vector<Tensor> outputs;  // per node
  std::vector<BatchNormResult> batchnorm;  // per node, used by bn nodes
  std::vector<LstmResult> lstm;            // per node, used by lstm nodes

  const Tensor& output(const GraphSpec& graph) const {
    return outputs[static_cast<size_t>(graph.output())];
  }
};

// `inputs` are (N, C, T, H, W) tensors, one per input node. T may differ from
// the declared geometry; C, H and W must match it.
ForwardPass forward(const GraphSpec& graph, const Checkpoint& weights,
                    const std::vector<Tensor>& inputs, Mode mode);

// Gradients of the loss with respect to every trainable parameter, keyed by
// parameter name, given its gradient with respect to the graph output.
Checkpoint backward(const GraphSpec& graph, const Checkpoint& weights, const ForwardPass& pass,
                    const Tensor& grad_output);

// Also returns the gradients with respect to the graph inputs.
struct FullGradients {
  Checkpoint params;
  std::vector<Tensor> inputs;
};
FullGradients backward_full(const GraphSpec& graph, const Checkpoint& weights,
                            const ForwardPass& pass, const Tensor& grad_output);

// Folds the batch statistics of a training pass into the running buffers.
void update_running_stats(const GraphSpec& graph, Checkpoint& weights, const ForwardPass& pass);

// Sets every batch norm's running statistics to the batch statistics it sees
// on `inputs`, layer by layer, so inference on those inputs reproduces
// training-mode normalization.
void calibrate_batchnorm(const GraphSpec& graph, Checkpoint& weights,
                         const std::vector<Tensor>& inputs);

}  // namespace i3d
