#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccnn/parallel.hpp"
#include "ccnn/tensor.hpp"

namespace ccnn {

/// Stride-1 convolution with symmetric zero "same" padding.
///
/// Weights are laid out (out, in, kh, kw) row-major; bias has one entry per
/// output channel. Kernel extents must be odd so the padding is symmetric.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::vector<float> weights;
  std::vector<float> bias;

  /// Zero-initialised layer. Throws InvalidArgument for even or zero extents.
  static ConvLayer zeros(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
                         std::size_t kernel_w);

  std::size_t pad_h() const noexcept { return kernel_h / 2; }
  std::size_t pad_w() const noexcept { return kernel_w / 2; }
  std::size_t fan_in() const noexcept { return in_channels * kernel_h * kernel_w; }
  /// (kh * kw * in + 1) * out
  std::size_t parameter_count() const noexcept { return (fan_in() + 1) * out_channels; }

  /// Throws InvalidArgument if weight/bias lengths disagree with the extents.
  void validate() const;
};

/// Gradient buffers congruent to a ConvLayer's parameters.
struct ConvGrads {
  std::vector<float> weights;
  std::vector<float> bias;

  static ConvGrads like(const ConvLayer& layer);
  void zero();
};

struct ConvBackward {
  ConvGrads params;
  Tensor input;
};

Tensor conv2d_forward(const Tensor& input, const ConvLayer& layer, const ComputeOptions& opts = {});

/// Gradients of a scalar loss given dL/d(output). `input` is the tensor the
/// forward pass consumed.
ConvBackward conv2d_backward(const Tensor& input, const ConvLayer& layer, const Tensor& grad_output,
                             const ComputeOptions& opts = {});

/// 2x2 window, stride 2. Throws InvalidArgument on odd spatial extents.
Tensor maxpool2x2_forward(const Tensor& input);

/// Routes each window's gradient to its first maximal element in row-major order.
Tensor maxpool2x2_backward(const Tensor& input, const Tensor& grad_output);

Tensor relu_forward(const Tensor& input);

/// Passes gradient where input > 0; zero elsewhere (including at 0).
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Concatenates along the channel axis, blocks in argument order.
Tensor concat_channels(std::span<const Tensor> inputs);

/// Inverse of concat_channels: splits `input` into consecutive channel blocks.
std::vector<Tensor> split_channels(const Tensor& input, std::span<const std::size_t> channels);

/// (1/N) * sum_i ||pred_i - gt_i||_2 over the batch axis, accumulated in double.
double euclidean_loss(const Tensor& pred, const Tensor& gt);

/// d(loss)/d(pred) scaled by `upstream`. Samples whose residual norm is
/// exactly zero receive zero gradient.
Tensor euclidean_loss_backward(const Tensor& pred, const Tensor& gt, double upstream = 1.0);

}  // namespace ccnn
