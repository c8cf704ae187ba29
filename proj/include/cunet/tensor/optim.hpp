#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cunet/tensor/tensor.hpp"

namespace cunet {

/// SGD with classical momentum:
///   v <- momentum * v + grad;  p <- p - lr * v
/// Gradients are zeroed after every step.
template <typename T>
class Sgd {
 public:
  Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  /// Throws if any parameter has no gradient buffer; the message lists the
  /// offending names. No parameter is touched in that case.
  void step(std::span<Parameter<T>> params);

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::map<std::string, std::vector<T>> velocity_;
};

/// One-off step with fresh (zero) momentum state.
template <typename T>
void sgd_step(std::span<Parameter<T>> params, double lr, double momentum);

}  // namespace cunet
