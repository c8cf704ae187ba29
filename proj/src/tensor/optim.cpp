#include "cunet/tensor/optim.hpp"

namespace cunet {

template <typename T>
void Sgd<T>::step(std::span<Parameter<T>> params) {
  std::string missing;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) missing += (missing.empty() ? "" : ", ") + p.name;
  }
  if (!missing.empty()) throw TapeError("sgd step: missing gradient for " + missing);

  const T lr = static_cast<T>(lr_);
  const T mom = static_cast<T>(momentum_);
  for (auto& p : params) {
    auto data = p.tensor.data();
    auto grad = p.tensor.grad();
    auto& v = velocity_[p.name];
    if (v.size() != data.size()) v.assign(data.size(), T(0));
    for (std::size_t i = 0; i < data.size(); ++i) {
      v[i] = mom * v[i] + grad[i];
      data[i] -= lr * v[i];
    }
    p.tensor.zero_grad();
  }
}

template <typename T>
void sgd_step(std::span<Parameter<T>> params, double lr, double momentum) {
  Sgd<T>(lr, momentum).step(params);
}

template class Sgd<float>;
template class Sgd<double>;
template void sgd_step<float>(std::span<Parameter<float>>, double, double);
template void sgd_step<double>(std::span<Parameter<double>>, double, double);

}  // namespace cunet
