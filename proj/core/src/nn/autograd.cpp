#include "sam/nn/autograd.hpp"

#include <unordered_set>

#include "sam/errors.hpp"

namespace sam::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape());
  return grad;
}

void Node::accumulate(const Tensor& g) {
  if (!requires_grad) return;
  if (grad.empty()) {
    grad = g;
    if (grad.shape() != value.shape()) grad = grad.reshaped(value.shape());
    return;
  }
  grad += g;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (!g_grad_enabled) return Var(std::move(node));
  bool needs = false;
  for (const Var& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return Var(std::move(node));
  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (const Var& in : inputs) node->inputs.push_back(in.node());
  node->backward = std::move(backward_fn);
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root) throw UsageError("backward on empty Var");
  if (root.value().size() != 1) {
    throw ShapeError("backward root must hold a single value, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversed it is a valid reverse-mode schedule.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  Node& r = *root.node();
  r.grad = Tensor(r.value.shape(), 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
  // Interior gradients are not needed once propagated; leaves keep theirs.
  for (Node* n : order) {
    if (n != &r) n->grad = Tensor();
  }
}

}  // namespace sam::nn
