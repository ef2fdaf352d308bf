#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "lpt/numerics/tensor.hpp"

namespace lpt::ad {

struct Node;

/// Gradient buffers handed to a node's backward function during one grad() call.
/// Buffers live outside the graph, so a graph can be differentiated repeatedly
/// and from several threads at once.
class GradAccess {
 public:
  GradAccess(const Node& node, std::unordered_map<const Node*, std::vector<Scalar>>& buffers)
      : node_(node), buffers_(buffers) {}

  /// True when input `i` participates in differentiation.
  bool wants(std::size_t i) const;
  /// Zero-initialised (on first touch) accumulation buffer for input `i`.
  std::span<Scalar> at(std::size_t i);

 private:
  const Node& node_;
  std::unordered_map<const Node*, std::vector<Scalar>>& buffers_;
};

using BackwardFn = std::function<void(std::span<const Scalar> out_grad, GradAccess& grads)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

/// Handle to a value in a differentiable computation.
class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var leaf(Tensor value, bool requires_grad = true);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Var make_result(Tensor, std::vector<Var>, BackwardFn, const char*);
};

/// Wraps an op output. Throws NumericError if `value` holds NaN/Inf. When no
/// input requires a gradient the backward function and inputs are dropped.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn backward, const char* op);

/// Reverse-mode gradients of a scalar `loss` with respect to each of `inputs`.
/// Inputs the loss does not depend on get an exact zero tensor.
std::vector<Tensor> grad(const Var& loss, std::span<const Var> inputs);

/// Functional form: evaluates `fn` on fresh leaves built from `at`.
std::vector<Tensor> grad(const std::function<Var(std::span<const Var>)>& fn,
                         std::span<const Tensor> at);

}  // namespace lpt::ad
