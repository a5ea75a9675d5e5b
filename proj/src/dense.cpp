#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "i3d/error.hpp"
#include "i3d/ops.hpp"

namespace i3d {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Tensor relu_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (int64_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& output) {
  if (grad_out.shape() != output.shape()) {
    throw ShapeError("relu_backward: " + shape_to_string(grad_out.shape()) + " vs " +
                     shape_to_string(output.shape()));
  }
  Tensor g(output.shape());
  for (int64_t i = 0; i < output.numel(); ++i) g[i] = output[i] > 0.0f ? grad_out[i] : 0.0f;
  return g;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw ShapeError("linear: input " + shape_to_string(x.shape()) + " incompatible with weight " +
                     shape_to_string(weight.shape()));
  }
  const int64_t m = x.dim(0), f = x.dim(1), k = weight.dim(0);
  if (bias && bias->numel() != k) {
    throw ShapeError("linear: bias " + shape_to_string(bias->shape()) + " for " +
                     std::to_string(k) + " outputs");
  }
  x.require_finite("linear input");
  Tensor out({m, k});
  MapMat y(out.ptr(), m, k);
  y.noalias() = MapConstMat(x.ptr(), m, f) * MapConstMat(weight.ptr(), k, f).transpose();
  if (bias) {
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t j = 0; j < k; ++j) y(r, j) += (*bias)[j];
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weight) {
  const int64_t m = x.dim(0), f = x.dim(1), k = weight.dim(0);
  if (grad_out.shape() != Shape{m, k}) {
    throw ShapeError("linear_backward: grad " + shape_to_string(grad_out.shape()) +
                     " for output (" + std::to_string(m) + "," + std::to_string(k) + ")");
  }
  LinearGrads g{Tensor(x.shape()), Tensor(weight.shape()), Tensor({k})};
  const MapConstMat dy(grad_out.ptr(), m, k);
  MapMat(g.input.ptr(), m, f).noalias() = dy * MapConstMat(weight.ptr(), k, f);
  MapMat(g.weight.ptr(), k, f).noalias() = dy.transpose() * MapConstMat(x.ptr(), m, f);
  for (int64_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (int64_t r = 0; r < m; ++r) s += dy(r, j);
    g.bias[j] = static_cast<float>(s);
  }
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax: expected (M, K), got " + shape_to_string(logits.shape()));
  }
  logits.require_finite("softmax logits");
  const int64_t m = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (int64_t r = 0; r < m; ++r) {
    const float* z = logits.ptr() + r * k;
    float* q = p.ptr() + r * k;
    const float mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(double(z[j]) - mx);
    for (int64_t j = 0; j < k; ++j) q[j] = static_cast<float>(std::exp(double(z[j]) - mx) / s);
  }
  return p;
}

Tensor softmax_backward(const Tensor& grad_probs, const Tensor& probs) {
  if (grad_probs.shape() != probs.shape() || probs.rank() != 2) {
    throw ShapeError("softmax_backward: " + shape_to_string(grad_probs.shape()) + " vs " +
                     shape_to_string(probs.shape()));
  }
  const int64_t m = probs.dim(0), k = probs.dim(1);
  Tensor g(probs.shape());
  for (int64_t r = 0; r < m; ++r) {
    const float* p = probs.ptr() + r * k;
    const float* dp = grad_probs.ptr() + r * k;
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += double(p[j]) * dp[j];
    for (int64_t j = 0; j < k; ++j) g.ptr()[r * k + j] = static_cast<float>(p[j] * (dp[j] - s));
  }
  return g;
}

namespace {

void check_labels(const Tensor& t, std::span<const int> labels) {
  if (t.rank() != 2 || static_cast<int64_t>(labels.size()) != t.dim(0)) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for scores " +
                     shape_to_string(t.shape()));
  }
  for (int y : labels) {
    if (y < 0 || y >= t.dim(1)) {
      throw ConfigError("loss: label " + std::to_string(y) + " out of range [0, " +
                        std::to_string(t.dim(1)) + ")");
    }
  }
}

}  // namespace

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  const int64_t m = logits.dim(0), k = logits.dim(1);
  CrossEntropy ce{0.0, softmax(logits)};
  for (int64_t r = 0; r < m; ++r) {
    // log-sum-exp form keeps the loss finite when the true class is far behind.
    const float* z = logits.ptr() + r * k;
    const double mx = *std::max_element(z, z + k);
    double s = 0.0;
    for (int64_t j = 0; j < k; ++j) s += std::exp(z[j] - mx);
    ce.loss += mx + std::log(s) - z[labels[static_cast<size_t>(r)]];
  }
  ce.loss /= static_cast<double>(m);
  return ce;
}

Tensor softmax_cross_entropy_backward(const Tensor& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  const int64_t m = probs.dim(0), k = probs.dim(1);
  Tensor g = probs;
  for (int64_t r = 0; r < m; ++r) g[r * k + labels[static_cast<size_t>(r)]] -= 1.0f;
  const float inv = 1.0f / static_cast<float>(m);
  for (int64_t i = 0; i < g.numel(); ++i) g[i] *= inv;
  return g;
}

namespace {
constexpr double kProbFloor = 1e-12;
}

double nll_loss(const Tensor& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  const int64_t m = probs.dim(0), k = probs.dim(1);
  double loss = 0.0;
  for (int64_t r = 0; r < m; ++r) {
    loss -= std::log(std::max<double>(probs[r * k + labels[static_cast<size_t>(r)]], kProbFloor));
  }
  return loss / static_cast<double>(m);
}

Tensor nll_loss_backward(const Tensor& probs, std::span<const int> labels) {
  check_labels(probs, labels);
  const int64_t m = probs.dim(0), k = probs.dim(1);
  Tensor g(probs.shape());
  for (int64_t r = 0; r < m; ++r) {
    const int64_t i = r * k + labels[static_cast<size_t>(r)];
    g[i] = static_cast<float>(-1.0 / (std::max<double>(probs[i], kProbFloor) * m));
  }
  return g;
}

}  // namespace i3d
