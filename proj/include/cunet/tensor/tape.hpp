#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cunet/tensor/tensor.hpp"

namespace cunet {

/// Records differentiable ops in execution order and replays them backwards.
///
/// Ops receive a `Tape*`; when it is non-null and any input requires a
/// gradient, the op appends a node whose backward rule reads the output
/// gradient and accumulates into the inputs. A tape is single-use: call
/// reset() before recording the next forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::string op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              BackwardFn backward) {
    if (backward_done_) {
      throw TapeError("record on a tape that already ran backward; reset() it first");
    }
    for (const auto& in : inputs) {
      if (in.is_recorded() && in.producer() != this) {
        throw TapeError(op + ": input was recorded on a different tape");
      }
    }
    if (output.is_recorded()) {
      throw TapeError(op + ": output is already recorded");
    }
    output.set_requires_grad(true);
    output.set_producer(this);
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output),
                          std::move(backward)});
  }

  /// Whether an op with these inputs should be recorded.
  static bool wants(const Tape* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (tape == nullptr) return false;
    for (const auto* in : inputs) {
      if (in != nullptr && in->defined() && in->requires_grad()) return true;
    }
    return false;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward rule in reverse
  /// recording order. Leaves that take part in the graph but receive no
  /// contribution end up with a zero gradient buffer.
  void backward(Tensor<T>& loss) {
    if (backward_done_) {
      throw TapeError("backward called twice on the same tape without reset()");
    }
    if (loss.numel() != 1) {
      throw TapeError("backward requires a scalar loss, got shape " +
                      shape_to_string(loss.shape()));
    }
    if (loss.producer() != this) {
      throw TapeError("loss is not connected to this tape");
    }
    backward_done_ = true;
    loss.ensure_grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // not reachable from the loss
      it->backward();
    }
    for (auto& node : nodes_) {
      for (auto& in : node.inputs) {
        if (in.requires_grad() && !in.is_recorded()) in.ensure_grad();
      }
    }
  }

  void reset() {
    for (auto& node : nodes_) node.output.set_producer(nullptr);
    nodes_.clear();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }
  const std::string& op_name(std::size_t i) const { return nodes_.at(i).op; }

 private:
  struct Node {
    std::string op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace cunet
