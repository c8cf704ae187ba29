#include "cunet/model/cunet.hpp"

#include <cmath>

#include "cunet/error.hpp"
#include "cunet/tensor/random.hpp"

namespace cunet::model {

template <typename T>
CUNet<T>::CUNet(const CUNetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto enc = config_.encoder_channels();
  std::size_t cin = config_.in_channels;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    encoders_.push_back(make_block("enc" + std::to_string(l), cin, enc[l], rng));
    cin = enc[l];
  }
  bottleneck_ = make_block("mid", cin, config_.bottleneck_channels(), rng);
  cin = config_.bottleneck_channels();
  decoders_.resize(config_.depth);
  for (std::size_t l = config_.depth; l-- > 0;) {
    decoders_[l] = make_block("dec" + std::to_string(l), enc[l] + cin, enc[l], rng);
    cin = enc[l];
  }
  head_weight_ = add_param("head.weight", Shape{config_.out_channels, cin, 1, 1});
  head_bias_ = add_param("head.bias", Shape{config_.out_channels});
  auto w = params_[head_weight_].tensor.data();
  const double bound = std::sqrt(6.0 / static_cast<double>(cin));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
std::size_t CUNet<T>::add_param(std::string name, Shape shape) {
  params_.push_back({std::move(name), Tensor<T>(std::move(shape), T(0), true)});
  return params_.size() - 1;
}

template <typename T>
typename CUNet<T>::Block CUNet<T>::make_block(const std::string& prefix, std::size_t cin,
                                              std::size_t cout, Rng& rng) {
  Block block;
  for (std::size_t i = 0; i < config_.convs_per_block; ++i) {
    const std::string idx = std::to_string(i);
    ConvNorm cn{};
    cn.weight = add_param(prefix + ".conv" + idx + ".weight", Shape{cout, cin, 3, 3});
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    for (auto& v : params_[cn.weight].tensor.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    cn.gamma = add_param(prefix + ".bn" + idx + ".gamma", Shape{cout});
    for (auto& v : params_[cn.gamma].tensor.data()) v = T(1);
    cn.beta = add_param(prefix + ".bn" + idx + ".beta", Shape{cout});
    NamedNorm norm{prefix + ".bn" + idx, ops::BatchNormState<T>(cout)};
    norm.state.epsilon = config_.bn_epsilon;
    norm.state.momentum = config_.bn_momentum;
    norms_.push_back(std::move(norm));
    cn.norm = norms_.size() - 1;
    block.push_back(cn);
    cin = cout;
  }
  return block;
}

template <typename T>
Tensor<T> CUNet<T>::run_block(const Block& block, Tensor<T> x, ops::Mode mode, Tape<T>* tape) {
  for (const auto& cn : block) {
    x = ops::conv2d(x, params_[cn.weight].tensor, Tensor<T>(), {1, 1}, tape);
    x = ops::batchnorm2d(x, params_[cn.gamma].tensor, params_[cn.beta].tensor,
                         norms_[cn.norm].state, mode, tape);
    x = ops::relu(x, tape);
  }
  return x;
}

template <typename T>
Tensor<T> CUNet<T>::forward(const Tensor<T>& x, ops::Mode mode, Tape<T>* tape) {
  if (x.rank() != 4) {
    throw ShapeError("model input must be [B, C, H, W], got " + shape_to_string(x.shape()));
  }
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("model expects " + std::to_string(config_.in_channels) +
                     " input channels, got " + std::to_string(x.dim(1)));
  }
  const std::size_t div = config_.input_divisor();
  for (const std::size_t axis : {2, 3}) {
    if (x.dim(axis) % div != 0 || x.dim(axis) == 0) {
      throw ShapeError(std::string(axis == 2 ? "height " : "width ") + std::to_string(x.dim(axis)) +
                       " is not divisible by " + std::to_string(div) + " (2^depth)");
    }
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (const auto& block : encoders_) {
    h = run_block(block, h, mode, tape);
    skips.push_back(h);
    h = ops::maxpool2d(h, tape);
  }
  h = run_block(bottleneck_, h, mode, tape);
  for (std::size_t l = config_.depth; l-- > 0;) {
    h = ops::upsample_nn2d(h, tape);
    h = ops::concat_channels(skips[l], h, tape);
    h = run_block(decoders_[l], h, mode, tape);
  }
  h = ops::conv2d(h, params_[head_weight_].tensor, params_[head_bias_].tensor, {1, 0}, tape);
  return ops::sigmoid(h, tape);
}

template <typename T>
Parameter<T>& CUNet<T>::parameter(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw Error("no parameter named " + name);
}

template <typename T>
std::size_t CUNet<T>::parameter_count() const {
  return count_parameters<T>(params_);
}

template class CUNet<float>;
template class CUNet<double>;

}  // namespace cunet::model
