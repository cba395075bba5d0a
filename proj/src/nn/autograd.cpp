#include "caad/nn/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "caad/errors.hpp"
#include "caad/nn/ops.hpp"

namespace caad::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
Var<T> Var<T>::make_result(Tensor<T> value, std::vector<Var> parents, BackwardFn<T> backward, const char* op) {
  Var out(std::move(value), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents = std::move(parents);
  out.node_->backward = std::move(backward);
  out.node_->op = op;
  return out;
}

namespace {

template <typename T>
std::vector<Node<T>*> topological_order(std::span<const Var<T>> outputs) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  for (const auto& out : outputs) {
    if (!out.requires_grad() || visited.count(out.node())) continue;
    visited.insert(out.node());
    stack.emplace_back(out.node(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].node();
        if (parent->requires_grad && !visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  return order;
}

template <typename T>
std::unordered_map<Node<T>*, Var<T>> propagate(std::span<const Var<T>> outputs,
                                              std::span<const Tensor<T>> grad_outputs, bool create_graph,
                                              const std::unordered_set<Node<T>*>& keep, bool keep_leaves) {
  require(outputs.size() == grad_outputs.size(), Errc::ShapeError, "one gradient per output required");
  std::unordered_map<Node<T>*, Var<T>> grads;
  GradModeGuard mode(create_graph);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (!outputs[i].requires_grad()) continue;
    require(grad_outputs[i].shape() == outputs[i].shape(), Errc::ShapeError,
            "seed gradient " + to_string(grad_outputs[i].shape()) + " vs output " + to_string(outputs[i].shape()));
    Var<T> seed(grad_outputs[i], false);
    auto& slot = grads[outputs[i].node()];
    slot = slot.defined() ? add(slot, seed) : seed;
  }
  const auto order = topological_order(outputs);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    if (!node->backward) continue;  // leaf
    const Var<T> g = found->second;
    if (!keep.count(node)) grads.erase(found);
    auto parent_grads = node->backward(g);
    for (std::size_t p = 0; p < node->parents.size(); ++p) {
      const auto& parent = node->parents[p];
      if (!parent.requires_grad() || p >= parent_grads.size() || !parent_grads[p].defined()) continue;
      auto& slot = grads[parent.node()];
      slot = slot.defined() ? add(slot, parent_grads[p]) : parent_grads[p];
    }
  }
  if (!keep_leaves) {
    for (auto it = grads.begin(); it != grads.end();) {
      it = keep.count(it->first) ? std::next(it) : grads.erase(it);
    }
  }
  return grads;
}

}  // namespace

template <typename T>
std::vector<Var<T>> grad(std::span<const Var<T>> outputs, std::span<const Tensor<T>> grad_outputs,
                         std::span<const Var<T>> inputs, bool create_graph) {
  std::unordered_set<Node<T>*> keep;
  for (const auto& in : inputs) keep.insert(in.node());
  auto grads = propagate(outputs, grad_outputs, create_graph, keep, false);
  std::vector<Var<T>> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = grads.find(in.node());
    result.push_back(found != grads.end() ? found->second : Var<T>(Tensor<T>(in.shape()), false));
  }
  return result;
}

template <typename T>
void backward(std::span<const Var<T>> outputs, std::span<const Tensor<T>> grad_outputs) {
  auto grads = propagate(outputs, grad_outputs, false, {}, true);
  for (auto& [node, g] : grads) {
    if (node->backward) continue;
    if (node->grad.empty()) {
      node->grad = g.value();
    } else {
      node->grad.flat() += g.value().flat();
    }
  }
}

template <typename T>
void backward(const Var<T>& scalar_output) {
  require(scalar_output.value().size() == 1, Errc::ShapeError, "backward() without seed needs a scalar");
  const Var<T> outs[] = {scalar_output};
  const Tensor<T> seeds[] = {Tensor<T>(scalar_output.shape(), T(1))};
  backward<T>(outs, seeds);
}

template class Var<float>;
template class Var<double>;
template std::vector<Var<float>> grad(std::span<const Var<float>>, std::span<const Tensor<float>>,
                                      std::span<const Var<float>>, bool);
template std::vector<Var<double>> grad(std::span<const Var<double>>, std::span<const Tensor<double>>,
                                       std::span<const Var<double>>, bool);
template void backward(std::span<const Var<float>>, std::span<const Tensor<float>>);
template void backward(std::span<const Var<double>>, std::span<const Tensor<double>>);
template void backward(const Var<float>&);
template void backward(const Var<double>&);

}  // namespace caad::nn
