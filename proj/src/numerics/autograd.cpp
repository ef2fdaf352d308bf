#include "lpt/numerics/autograd.hpp"

#include <string>

#include "lpt/errors.hpp"

namespace lpt::ad {

bool GradAccess::wants(std::size_t i) const { return node_.inputs.at(i)->requires_grad; }

std::span<Scalar> GradAccess::at(std::size_t i) {
  const Node* input = node_.inputs.at(i).get();
  auto& buf = buffers_[input];
  if (buf.empty()) buf.assign(input->value.numel(), Scalar(0));
  return {buf.data(), buf.size()};
}

Var Var::constant(Tensor value) { return leaf(std::move(value), false); }

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

namespace {

std::vector<const Node*> topo_order(const Node* root) {
  std::vector<const Node*> order;
  std::unordered_map<const Node*, bool> visited;
  std::vector<std::pair<const Node*, std::size_t>> stack{{root, 0}};
  visited[root] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited[child]) {
        visited[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Tensor> grad(const Var& loss, std::span<const Var> inputs) {
  if (loss.numel() != 1) {
    throw ShapeError("grad() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.value().all_finite()) throw NumericError("loss is not finite");

  std::unordered_map<const Node*, std::vector<Scalar>> buffers;
  if (loss.requires_grad()) {
    const Node* root = loss.node().get();
    buffers[root] = {Scalar(1)};
    auto order = topo_order(root);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Node* node = *it;
      if (!node->backward) continue;
      auto found = buffers.find(node);
      if (found == buffers.end()) continue;
      // Moved out so that the buffer map may rehash while the backward runs.
      std::vector<Scalar> out_grad = std::move(found->second);
      buffers.erase(found);
      GradAccess access(*node, buffers);
      node->backward(out_grad, access);
      if (inputs.empty()) continue;
      bool is_input = false;
      for (const auto& in : inputs) is_input = is_input || in.node().get() == node;
      if (is_input) buffers[node] = std::move(out_grad);
    }
  }

  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = buffers.find(in.node().get());
    if (found == buffers.end() || found->second.empty()) {
      result.emplace_back(in.shape(), Scalar(0));
      continue;
    }
    Tensor g(in.shape(), found->second);
    if (!g.all_finite()) throw NumericError("non-finite gradient");
    result.push_back(std::move(g));
  }
  return result;
}

std::vector<Tensor> grad(const std::function<Var(std::span<const Var>)>& fn,
                         std::span<const Tensor> at) {
  std::vector<Var> leaves;
  leaves.reserve(at.size());
  for (const auto& t : at) leaves.push_back(Var::leaf(t, true));
  Var loss = fn(leaves);
  return grad(loss, leaves);
}

}  // namespace lpt::ad
