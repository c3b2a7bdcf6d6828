#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msfr/rng.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

/// Convolution weights (outC x inC x kH x kW) and bias (outC).
struct ConvLayerParams {
  Param weight;
  Param bias;
  int stride = 1;
  int padding = 0;

  ConvLayerParams() = default;
  ConvLayerParams(const std::string& name, int in_channels, int out_channels, int kernel, int stride_,
                  int padding_);

  int in_channels() const { return weight.value.dim(1); }
  int out_channels() const { return weight.value.dim(0); }
  int kernel_h() const { return weight.value.dim(2); }
  int kernel_w() const { return weight.value.dim(3); }
};

/// Fully-connected weights (D x M) and bias (M).
struct FcLayerParams {
  Param weight;
  Param bias;

  FcLayerParams() = default;
  FcLayerParams(const std::string& name, int in_features, int out_features);

  int in_features() const { return weight.value.dim(0); }
  int out_features() const { return weight.value.dim(1); }
};

/// Zero-mean uniform with half-width sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng);
void init_conv(ConvLayerParams& p, Rng& rng);
void init_fc(FcLayerParams& p, Rng& rng);

// ---- convolution -----------------------------------------------------------

int conv_out_extent(int in, int kernel, int stride, int padding);

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor conv2d(const Tensor& input, const ConvLayerParams& p);

struct ConvGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int padding,
                          const Tensor& grad_out);
/// Accumulates weight/bias gradients into `p` and returns the input gradient.
Tensor conv2d_backward(const Tensor& input, ConvLayerParams& p, const Tensor& grad_out);

// ---- max pooling -----------------------------------------------------------

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Ties go to the lowest linear input index.
PoolResult maxpool2d(const Tensor& input, int window, int stride);
Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& grad_out);

// ---- activations -----------------------------------------------------------

Tensor relu(const Tensor& input);
/// Passes the gradient where input > 0.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);
/// Same rule, keyed on the forward output (output > 0 iff input > 0).
void relu_backward_inplace(const Tensor& output, Tensor& grad);

// ---- fully connected -------------------------------------------------------

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias);
Tensor fully_connected(const Tensor& input, const FcLayerParams& p);

struct FcGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
FcGrads fully_connected_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);
Tensor fully_connected_backward(const Tensor& input, FcLayerParams& p, const Tensor& grad_out);

// ---- losses ----------------------------------------------------------------

struct SoftmaxXent {
  double loss = 0.0;  // mean negative log-probability of the true class
  Tensor probs;       // N x K
};

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Gradient of `scale * loss` w.r.t. logits: scale * (probs - onehot) / N.
Tensor softmax_cross_entropy_backward(const SoftmaxXent& fwd, std::span<const int> labels, double scale = 1.0);

/// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

/// Sum over masked elements of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = pred - target.
double smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask);
Tensor smooth_l1_backward(const Tensor& pred, const Tensor& target, const Tensor& mask, double scale = 1.0);

}  // namespace msfr
