#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "caad/nn/tensor.hpp"

namespace caad::nn {

template <typename T>
class Var;

/// Maps the gradient of a node's output to one gradient per parent.
/// Undefined Vars mark parents that receive nothing.
template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad_output)>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // accumulated by backward() on leaves only
  bool requires_grad = false;
  std::vector<Var<T>> parents;
  BackwardFn<T> backward;
  const char* op = "leaf";
};

/// Reverse-mode differentiable handle. Backward functions are themselves written
/// with Var ops, so running them with graph recording enabled yields a
/// differentiable gradient (double backprop, as the gradient penalty needs).
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  /// Records a new graph node when grad mode is on and any parent needs grad.
  static Var make_result(Tensor<T> value, std::vector<Var> parents, BackwardFn<T> backward,
                         const char* op);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(std::size_t axis) const { return node_->value.dim(axis); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool is_leaf() const noexcept { return node_ && !node_->backward; }

  /// Gradient accumulated by backward(); empty tensor until the first call.
  Tensor<T>& grad() { return node_->grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Shares no graph with this Var.
  Var detach() const { return Var(node_->value, false); }
  Node<T>* node() const noexcept { return node_.get(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled() noexcept;

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

struct NoGradGuard : GradModeGuard {
  NoGradGuard() : GradModeGuard(false) {}
};

/// d(sum_i <grad_outputs[i], outputs[i]>)/d(inputs). With create_graph the
/// returned Vars are differentiable w.r.t. everything the outputs depended on.
/// Inputs that the outputs do not depend on get a zero tensor.
template <typename T>
std::vector<Var<T>> grad(std::span<const Var<T>> outputs, std::span<const Tensor<T>> grad_outputs,
                         std::span<const Var<T>> inputs, bool create_graph = false);

/// Accumulates d(sum_i <grad_outputs[i], outputs[i]>)/d(leaf) into every
/// reachable leaf that requires grad.
template <typename T>
void backward(std::span<const Var<T>> outputs, std::span<const Tensor<T>> grad_outputs);

/// Scalar convenience: seeds the gradient with ones.
template <typename T>
void backward(const Var<T>& scalar_output);

}  // namespace caad::nn
