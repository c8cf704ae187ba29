#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cunet/error.hpp"

namespace cunet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  // Set when the tensor is the output of an op recorded on a tape.
  const Tape<T>* producer = nullptr;
};

}  // namespace detail

/// Dense row-major N-d array with shared ownership. Copies alias the same
/// storage; use clone() for a deep copy. A default-constructed tensor is
/// null and only valid as a placeholder.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage<T>>()) {
    s_->data.assign(shape_numel(shape), fill);
    s_->shape = std::move(shape);
    s_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : s_(std::make_shared<detail::TensorStorage<T>>()) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_to_string(shape));
    }
    s_->shape = std::move(shape);
    s_->data = std::move(data);
    s_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  bool defined() const { return s_ != nullptr; }

  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* raw() { return s_->data.data(); }
  const T* raw() const { return s_->data.data(); }

  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }

  /// Element of a 4-D tensor.
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const Shape& sh = s_->shape;
    return s_->data[((n * sh[1] + c) * sh[2] + h) * sh[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& sh = s_->shape;
    return s_->data[((n * sh[1] + c) * sh[2] + h) * sh[3] + w];
  }

  /// Value of a single-element tensor.
  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return s_->data[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool value) { s_->requires_grad = value; }

  // The gradient buffer is bookkeeping shared by every handle to the
  // storage, so it stays writable through const handles (backward rules
  // hold const copies of their inputs).
  bool has_grad() const { return !s_->grad.empty(); }
  std::span<T> grad() const { return s_->grad; }

  /// Allocates a zero gradient buffer if none exists and returns it.
  std::span<T> ensure_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    return s_->grad;
  }
  void zero_grad() const {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }
  void clear_grad() const { s_->grad.clear(); }

  /// True when produced by an op recorded on a tape (i.e. not a leaf).
  bool is_recorded() const { return s_->producer != nullptr; }
  const Tape<T>* producer() const { return s_->producer; }
  void set_producer(const Tape<T>* tape) { s_->producer = tape; }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  /// Deep copy of data only; the copy is a fresh leaf without gradient.
  Tensor clone() const { return Tensor(shape(), s_->data, false); }

  /// Same data reinterpreted under a new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_to_string(this->shape()) +
                       " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), s_->data, false);
  }

  bool all_finite() const {
    for (const T v : s_->data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  /// Converts to another precision; the result is a leaf.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(s_->data.begin(), s_->data.end());
    return Tensor<U>(shape(), std::move(out), false);
  }

 private:
  std::shared_ptr<detail::TensorStorage<T>> s_;
};

/// Named trainable tensor, e.g. "enc1.conv1.weight".
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

}  // namespace cunet
