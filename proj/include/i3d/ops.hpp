#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "i3d/tensor.hpp"

namespace i3d {

enum class Padding { kSame, kValid };
enum class Mode { kTrain, kInfer };

// Output length and low-side padding for one spatio-temporal axis.
//
// SAME: out = ceil(in / stride), total padding max((out-1)*stride + k - in, 0)
// split floor/ceil between the low and high side. VALID: no padding,
// out = floor((in - k) / stride) + 1.
struct AxisPlan {
  int64_t in = 0;
  int64_t out = 0;
  int64_t pad_lo = 0;
  int kernel = 1;
  int stride = 1;
};
AxisPlan plan_axis(int64_t in, int kernel, int stride, Padding padding);

// Window geometry shared by convolution and pooling, axes ordered (T, H, W).
struct ConvSpec {
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<Padding, 3> padding{Padding::kSame, Padding::kSame, Padding::kSame};
  bool use_bias = false;

  static ConvSpec cube(int k, int s = 1, Padding p = Padding::kSame);
  // kT = 1, temporal stride 1: a per-frame 2D window.
  static ConvSpec planar(int k, int s = 1, Padding p = Padding::kSame);

  void validate() const;
  bool operator==(const ConvSpec&) const = default;
};

// Plans all three axes of a (N, C, T, H, W) input.
std::array<AxisPlan, 3> plan_window(const Shape& input, const ConvSpec& spec);

// ---------------------------------------------------------------------------
// Convolution. Input (N, Ci, T, H, W); kernel (Co, Ci, kT, kH, kW), or
// (Co, Ci, kH, kW) which is read as kT = 1.

Tensor conv3d_forward(const Tensor& input, const Tensor& kernel,
                      const ConvSpec& spec, const Tensor* bias = nullptr);

struct ConvGrads {
  Tensor input;
  Tensor kernel;  // same shape as the kernel passed in
  Tensor bias;    // (Co), always computed
};
ConvGrads conv3d_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& kernel, const ConvSpec& spec);

// (N, C, H, W) image convolution with a (Co, Ci, kH, kW) kernel.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, int stride,
                      Padding padding, const Tensor* bias = nullptr);

// ---------------------------------------------------------------------------
// Pooling. Max routes gradient to the first maximum in row-major window
// order. Average divides by the number of non-padding elements.

enum class PoolKind { kMax, kAvg };

struct PoolSpec {
  PoolKind kind = PoolKind::kMax;
  ConvSpec window;
};

Tensor pool3d_forward(const Tensor& input, const PoolSpec& spec);
Tensor pool3d_backward(const Tensor& grad_out, const Tensor& input,
                       const PoolSpec& spec);

// ---------------------------------------------------------------------------
// Batch normalization over every axis except axis 1 (channels).

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-3f;
  float decay = 0.99f;

  static BatchNormState identity(int64_t channels);
  int64_t channels() const { return gamma.numel(); }
  void validate() const;
};

struct BatchNormResult {
  Tensor output;
  // Statistics used for normalization: batch statistics in train mode,
  // running statistics in infer mode. Variance is the biased estimate.
  std::vector<float> mean;
  std::vector<float> var;
};

BatchNormResult batchnorm_forward(const Tensor& input, const BatchNormState& state,
                                  Mode mode);
// running <- decay * running + (1 - decay) * batch
void update_running_stats(BatchNormState& state, const BatchNormResult& batch);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm_backward(const Tensor& grad_out, const Tensor& input,
                                  const BatchNormState& state,
                                  const BatchNormResult& forward, Mode mode);

// ---------------------------------------------------------------------------

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& grad_out, const Tensor& output);

// x (M, F), weight (K, F), bias (K) -> (M, K)
Tensor linear_forward(const Tensor& x, const Tensor& weight,
                      const Tensor* bias = nullptr);
struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x,
                            const Tensor& weight);

// Row-wise softmax of (M, K) logits.
Tensor softmax(const Tensor& logits);
Tensor softmax_backward(const Tensor& grad_probs, const Tensor& probs);

struct CrossEntropy {
  double loss = 0.0;  // mean over rows of -log p[label]
  Tensor probs;
};
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// d(mean loss)/d(logits) = (probs - onehot) / M
Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels);

// Negative log-likelihood of rows that are already probabilities.
double nll_loss(const Tensor& probs, std::span<const int> labels);
Tensor nll_loss_backward(const Tensor& probs, std::span<const int> labels);

// ---------------------------------------------------------------------------
// LSTM with recurrent batch normalization. Gate order (i, f, g, o).
//
//   a_t = BN_x(W_ih x_t) + BN_h(W_hh h_{t-1}) + b
//   c_t = sigmoid(f) * c_{t-1} + sigmoid(i) * tanh(g)
//   h_t = sigmoid(o) * tanh(c_t)
//
// The two normalizations carry a scale only (no shift; b provides it).
// BN_x uses statistics pooled over batch and time; BN_h uses per-step batch
// statistics in training, and running statistics pooled over steps at
// inference.

struct LstmParams {
  Tensor w_ih;      // (4H, D)
  Tensor w_hh;      // (4H, H)
  Tensor bias;      // (4H)
  Tensor gamma_ih;  // (4H)
  Tensor gamma_hh;  // (4H)
  Tensor running_mean_ih, running_var_ih;  // (4H) buffers
  Tensor running_mean_hh, running_var_hh;
  float epsilon = 1e-3f;
  float decay = 0.99f;

  static LstmParams zeros(int64_t input_size, int64_t hidden);
  int64_t input_size() const { return w_ih.dim(1); }
  int64_t hidden() const { return w_hh.dim(1); }
  void validate() const;
};

struct LstmCache;

struct LstmResult {
  Tensor h;  // (N, H, T)
  Tensor c;  // (N, H, T)
  std::shared_ptr<const LstmCache> cache;
};

// x (N, D, T); optional initial state (N, H).
LstmResult lstm_forward(const Tensor& x, const LstmParams& params, Mode mode,
                        const Tensor* h0 = nullptr, const Tensor* c0 = nullptr);
// Folds the batch statistics of a training forward into the running buffers.
void lstm_update_running_stats(LstmParams& params, const LstmResult& result);

struct LstmGrads {
  Tensor input;  // (N, D, T)
  Tensor h0, c0;
  Tensor w_ih, w_hh, bias, gamma_ih, gamma_hh;
};
// grad_h (N, H, T) is the loss gradient w.r.t. every hidden output; grad_c_last
// (optional, (N, H)) adds a gradient on the final cell state.
LstmGrads lstm_backward(const Tensor& grad_h, const LstmParams& params,
                        const LstmResult& forward, const Tensor* grad_c_last = nullptr);

// One step with batch statistics: (x_t (N, D), h (N, H), c (N, H)).
struct LstmStep {
  Tensor h;
  Tensor c;
};
LstmStep lstm_cell_bn(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                      const LstmParams& params);

}  // namespace i3d
