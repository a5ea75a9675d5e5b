#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "i3d/checkpoint.hpp"
#include "i3d/config.hpp"
#include "i3d/flow.hpp"
#include "i3d/graph.hpp"
#include "i3d/video.hpp"

namespace i3d {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double drop_factor = 10.0;
  // Evaluations without a validation-loss improvement larger than min_delta
  // before the learning rate is divided by drop_factor; 0 never drops.
  int patience = 3;
  double min_delta = 1e-3;
  int64_t max_steps = 1000;
  int64_t batch_size = 8;
  int64_t eval_interval = 50;
  uint64_t seed = 0;
  double clip_norm = 0.0;  // > 0: rescale gradients to this global L2 norm
  bool augment = false;    // apply augment_train to every sampled clip
  AugmentConfig augmentation{0, 32, 0.5, 0};
  TVL1Params flow;         // for graphs with flow inputs

  void validate() const;
  // Keys: lr, momentum, drop_factor, patience, min_delta, max_steps,
  // batch_size, eval_interval, seed, clip_norm, augment, crop, resize,
  // flip_probability, temporal_crop. Unknown keys raise ConfigError.
  void apply(const KeyValues& values);
};

struct MetricRow {
  int64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

// "step,lr,train_loss,val_loss,val_acc" plus one line per row.
std::string history_csv(const std::vector<MetricRow>& history);

// v <- momentum * v + g; p <- p - lr * v, for every tensor of `grads`.
// Velocities are created as zeros on first use. Shape mismatches raise
// ShapeError naming the tensor.
void sgd_momentum_step(Checkpoint& params, const Checkpoint& grads, Checkpoint& velocity,
                       double lr, double momentum);

// Network inputs for one clip, (1, C, T, H, W) per graph input in graph order.
// RGB frames are mapped to [-1, 1]. RGB inputs of graphs that accept any clip
// length get every frame; fixed-length inputs get evenly spaced frames. Flow
// inputs with 2 channels get the consecutive-pair flows (T - 1 steps); wider
// flow inputs get a stack of channels / 2 flows centred on each sampled frame.
std::vector<Tensor> clip_inputs(const GraphSpec& graph, const VideoClip& clip,
                                const TVL1Params& flow = {});
// Concatenates per-clip inputs along N.
std::vector<Tensor> batch_inputs(const std::vector<const std::vector<Tensor>*>& items);

// Class probabilities (N, K): softmax of logits or the graph's own
// probabilities, averaged over time, or the last step for per-step outputs
// (LSTM).
Tensor clip_probabilities(const GraphSpec& graph, const Tensor& output);

// Cross-entropy and its gradient with respect to the graph output. Per-step
// outputs average the per-step losses; probability outputs use -log p.
struct LossResult {
  double loss = 0.0;
  Tensor grad;
};
LossResult classification_loss(const GraphSpec& graph, const Tensor& output,
                               const std::vector<int>& labels);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  std::vector<int> predictions;
  std::vector<int64_t> per_class_correct;
  std::vector<int64_t> per_class_total;
};

EvalResult evaluate(const GraphSpec& graph, const Checkpoint& weights,
                    const std::vector<VideoClip>& clips, const TVL1Params& flow = {},
                    int64_t batch_size = 16);

struct TrainResult {
  Checkpoint best;   // weights at the lowest validation loss
  Checkpoint last;
  std::vector<MetricRow> history;
  double best_val_loss = 0.0;
  double final_lr = 0.0;
};

// Mini-batch SGD with momentum. Batches are drawn from per-epoch shuffles of
// `train_set`; every eval_interval steps (and after the last step) the
// validation set is evaluated and the plateau schedule applied. A non-finite
// loss raises NumericError naming the step.
TrainResult train(const GraphSpec& graph, Checkpoint weights,
                  const std::vector<VideoClip>& train_set, const std::vector<VideoClip>& val_set,
                  const TrainConfig& config);

}  // namespace i3d
