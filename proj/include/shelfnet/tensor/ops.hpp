#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "shelfnet/tensor/tensor.hpp"

// Differentiable primitives. Every op records itself on the tape when any
// input requires a gradient; otherwise it is a plain forward computation.
namespace shelfnet {

// Weights are (c_out, c_in, kh, kw); no bias.
// Output extent: floor((h + 2*padding - dilation*(kh-1) - 1) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, int stride = 1, int padding = 0,
                 int dilation = 1);

// Linear adjoint of conv2d. Weights are (c_in, c_out, kh, kw).
// Output extent: (h - 1)*stride - 2*padding + kh + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, int stride = 1, int padding = 0,
                           int output_padding = 0);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormState(std::int64_t channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEps = 1e-5;

// gamma/beta are (1, c, 1, 1). Train mode normalizes with the biased batch
// variance over (n, h, w) and folds the batch statistics into `state` as
// new = (1 - momentum) * old + momentum * batch (unbiased variance, as the
// running estimate is used at eval time). Eval mode uses `state` only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, Mode mode, double momentum = kBatchNormMomentum,
                     double eps = kBatchNormEps);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Mode mode, std::uint64_t seed);

// Bilinear resampling with the align_corners=false convention:
// src = (dst + 0.5) * (in / out) - 0.5, clamped to the valid range.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w);

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int factor);

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int kernel, int stride, int padding);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);

// x (n,c,h,w) scaled per channel by gate (n,c,1,1).
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& gate);

// Scalar <x, y>.
template <typename T>
Tensor<T> dot(const Tensor<T>& x, const Tensor<T>& y);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

// Scalar mean over the listed flat indices.
template <typename T>
Tensor<T> select_mean(const Tensor<T>& x, std::span<const std::int64_t> indices);

inline constexpr int kIgnoreIndex = 255;

// Per-pixel negative log-likelihood as an (n,1,h,w) tensor plus the mask of
// scored pixels. Ignored pixels carry loss 0 and receive no gradient.
template <typename T>
struct PixelLosses {
  Tensor<T> values;
  std::vector<std::uint8_t> valid;

  std::vector<std::int64_t> valid_indices() const;
};

template <typename T>
struct CrossEntropy {
  Tensor<T> loss;  // mean over scored pixels
  PixelLosses<T> pixels;
};

// logits (n,K,h,w); labels hold n*h*w entries in [0,K) or ignore_index.
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                                      int ignore_index = kIgnoreIndex);

// Channel softmax, forward only.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

// Per-pixel argmax over channels, n*h*w entries.
template <typename T>
std::vector<std::int32_t> argmax_channels(const Tensor<T>& scores);

}  // namespace shelfnet
