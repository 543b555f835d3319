#pragma once

#include "selfens/tensor.hpp"

#include <vector>

namespace selfens {

enum class Mode { train, eval };

struct BatchNormOptions {
  double epsilon = 1e-5;
  /// Weight of the current batch in the running-stat moving average.
  double momentum = 0.1;
};

/// Per-channel running statistics owned by a batch-norm layer.
template <typename T> struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t channels)
      : running_mean(channels, T{0}), running_var(channels, T{1}) {}
};

// Layer ops. Images are [batch, channel, height, width].

/// 3x3 convolution, stride 1, zero padding 1, no bias.
/// input [B,Cin,H,W], weight [Cout,Cin,3,3] -> [B,Cout,H,W].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T> &input, const BasicTensor<T> &weight);

/// Normalizes with batch statistics and folds them into `stats` (unbiased
/// variance for the running estimate).
template <typename T>
BasicTensor<T> batch_norm_train(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                                const BasicTensor<T> &beta, BatchNormStats<T> &stats,
                                const BatchNormOptions &options = {});

/// Normalizes with the running statistics; touches nothing.
template <typename T>
BasicTensor<T> batch_norm_eval(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                               const BasicTensor<T> &beta, const BatchNormStats<T> &stats,
                               const BatchNormOptions &options = {});

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T> &input, const BasicTensor<T> &gamma,
                          const BasicTensor<T> &beta, BatchNormStats<T> &stats, Mode mode,
                          const BatchNormOptions &options = {}) {
  return mode == Mode::train ? batch_norm_train(input, gamma, beta, stats, options)
                             : batch_norm_eval(input, gamma, beta, stats, options);
}

/// max(0, x); the derivative at 0 is taken as 0.
template <typename T> BasicTensor<T> relu(const BasicTensor<T> &input);

/// Non-overlapping 2x2 max pooling. Ties route the gradient to the first
/// element of the window in row-major order.
template <typename T> BasicTensor<T> max_pool2(const BasicTensor<T> &input);

/// [B,C,H,W] -> [B,C], mean over all spatial positions.
template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T> &input);

/// [B,F] x [F,K] -> [B,K], no bias.
template <typename T>
BasicTensor<T> dense(const BasicTensor<T> &input, const BasicTensor<T> &weight);

/// Row-wise softmax over the last axis of a [B,K] tensor.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T> &logits);

// Elementwise helpers used to assemble losses.

template <typename T> BasicTensor<T> add(const BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T> &a, const BasicTensor<T> &b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T> &a, double factor);
template <typename T> BasicTensor<T> square(const BasicTensor<T> &a);
/// Sum of all elements as a scalar.
template <typename T> BasicTensor<T> sum(const BasicTensor<T> &a);
/// Mean of all elements as a scalar.
template <typename T> BasicTensor<T> mean(const BasicTensor<T> &a);

} // namespace selfens
