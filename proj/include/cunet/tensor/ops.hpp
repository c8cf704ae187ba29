#pragma once

#include <cstddef>

#include "cunet/tensor/tape.hpp"
#include "cunet/tensor/tensor.hpp"

namespace cunet::ops {

/// Every op takes an optional tape as its last argument. With a tape and at
/// least one input that requires a gradient, the op is recorded; otherwise
/// it is a plain forward computation.

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// 2-D cross-correlation (no kernel flip).
/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or null.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options, Tape<T>* tape = nullptr);

/// 2x2 max pooling, stride 2. Ties route the gradient to the first maximum
/// in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample_nn2d(const Tensor<T>& input, Tape<T>* tape = nullptr);

enum class Mode { train, eval };

/// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

/// Batch normalisation over (N,H,W) per channel. Train mode normalises with
/// the biased batch variance and folds the batch statistics into `state`
/// (unbiased variance) by exponential moving average; eval mode uses the
/// running statistics and leaves them untouched.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, Tape<T>* tape = nullptr);

/// max(0, x); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Logistic function, clamped to the open interval (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Channel-axis concatenation, `a` first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value, Tape<T>* tape = nullptr);

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// Sum of all elements as a scalar tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a, Tape<T>* tape = nullptr);

/// Output extent of a convolution along one axis; throws if it would be
/// zero or the window does not fit.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding, const char* axis);

}  // namespace cunet::ops
