#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cunet/model/config.hpp"
#include "cunet/tensor/ops.hpp"
#include "cunet/tensor/random.hpp"
#include "cunet/tensor/tensor.hpp"

namespace cunet::model {

/// U-shaped segmentation network. Each block is `convs_per_block` x
/// (3x3 same conv -> batch norm -> relu); encoder blocks are followed by
/// 2x2 max pooling, decoder stages upsample (nearest), concatenate the
/// matching encoder output and run a block. A 1x1 conv and a sigmoid give
/// the per-pixel probability.
///
/// Convs feeding batch norm carry no bias (the norm's beta subsumes it);
/// the 1x1 head has one.
template <typename T>
class CUNet {
 public:
  struct NamedNorm {
    std::string name;  // e.g. "enc0.bn1"
    ops::BatchNormState<T> state;
  };

  /// Validates the config and draws He-uniform weights from `seed`.
  CUNet(const CUNetConfig& config, std::uint64_t seed);

  const CUNetConfig& config() const { return config_; }

  /// x: [B, in_channels, H, W] with H, W multiples of 2^depth.
  /// Returns [B, out_channels, H, W] in (0, 1). Train mode updates the
  /// batch-norm running statistics.
  Tensor<T> forward(const Tensor<T>& x, ops::Mode mode, Tape<T>* tape = nullptr);

  std::span<Parameter<T>> parameters() { return params_; }
  std::span<const Parameter<T>> parameters() const { return params_; }
  std::span<NamedNorm> norms() { return norms_; }
  std::span<const NamedNorm> norms() const { return norms_; }

  /// Throws Error when no parameter has this name.
  Parameter<T>& parameter(const std::string& name);

  /// Total scalar count over all trainable parameters.
  std::size_t parameter_count() const;

 private:
  struct ConvNorm {
    std::size_t weight, gamma, beta, norm;
  };
  using Block = std::vector<ConvNorm>;

  Block make_block(const std::string& prefix, std::size_t cin, std::size_t cout, Rng& rng);
  std::size_t add_param(std::string name, Shape shape);
  Tensor<T> run_block(const Block& block, Tensor<T> x, ops::Mode mode, Tape<T>* tape);

  CUNetConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<NamedNorm> norms_;
  std::vector<Block> encoders_;
  Block bottleneck_;
  std::vector<Block> decoders_;  // indexed by level, like encoders_
  std::size_t head_weight_ = 0;
  std::size_t head_bias_ = 0;
};

/// Sum of element counts.
template <typename T>
std::size_t count_parameters(std::span<const Parameter<T>> params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

extern template class CUNet<float>;
extern template class CUNet<double>;

}  // namespace cunet::model
