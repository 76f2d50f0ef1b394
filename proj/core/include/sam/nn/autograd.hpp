#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sam/nn/tensor.hpp"

namespace sam::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in a reverse-mode computation graph. Constants never receive
/// gradients and are safe to share between graphs on different threads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  /// Trainable leaf that accumulates gradients across backward passes.
  static Var leaf(Tensor value);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void zero_grad();

  const Shape& shape() const { return node_->value.shape(); }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

  const NodePtr& node() const { return node_; }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

/// Builds an op result. The backward closure runs only when some input
/// requires a gradient and graph recording is enabled on this thread.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a single-element root.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace sam::nn
