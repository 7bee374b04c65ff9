// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "rna/rng.hpp"
#include "rna/tensor.hpp"

namespace rna {

struct Conv2dParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
};

/// Output extent of a strided, dilated window over `in` padded by `pad`.
/// Throws ShapeError when no output position exists.
std::size_t window_out_extent(std::size_t in, std::size_t kernel,
                              std::size_t stride, std::size_t pad,
                              std::size_t dilation);

/// "Same"-style symmetric padding for an odd kernel.
constexpr std::size_t same_padding(std::size_t kernel, std::size_t dilation) {
  return dilation * (kernel - 1) / 2;
}

/// x: NCHW, w: OIHW, optional bias of length O.
Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dParams& p,
              const Tensor* bias = nullptr);

enum class BnMode {
  kTrain,   // batch statistics, running estimates updated
  kEval,    // running estimates
  kFrozen,  // running estimates, never updated (fine-tuning)
};

const char* bn_mode_name(BnMode mode);

/// Per-channel running estimates owned by a normalization layer.
struct BnState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.9;
  double eps = 1e-8;

  explicit BnState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}

  /// Marks the estimates as mean 0 / variance 1.
  void reset_identity();
};

/// Normalizes NCHW (or NC) input per channel. Train mode folds the batch
/// statistics into `state` (first update copies them, later ones use an
/// exponential moving average with `state.momentum`).
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 BnState& state, BnMode mode);

Tensor relu(const Tensor& x);

struct PoolParams {
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t dilation = 1;
};

/// Max pooling over NCHW. Padding positions never win; ties go to the first
/// element in row-major window order.
Tensor maxpool(const Tensor& x, const PoolParams& p);

/// NCHW -> NC mean over the spatial extent.
Tensor global_avgpool(const Tensor& x);

/// x: [N, in], w: [out, in], b: [out] -> [N, out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

/// Identity forward; the backward pass multiplies the gradient by
/// `grad_factor` (0 blocks the route entirely).
Tensor gate(const Tensor& x, double grad_factor);
inline Tensor stop_gradient(const Tensor& x) { return gate(x, 0.0); }

/// Inverted dropout; identity when `training` is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

inline constexpr int kIgnoreLabel = 255;

/// Mean softmax cross-entropy. logits: [N, C] with N labels, or [N, C, H, W]
/// with N*H*W labels in NHW order. Labels equal to `ignore_label` are
/// skipped; an all-ignored batch yields 0.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             int ignore_label = kIgnoreLabel);

}  // namespace rna
