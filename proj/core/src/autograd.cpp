#include "seffsal/autograd.hpp"

#include <unordered_set>

namespace seffsal {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw ContractError("access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw ContractError("access to undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

const Tensor& Var::grad() const {
  if (!node_) throw ContractError("access to undefined Var");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Tensor& Var::grad_buffer() const {
  if (node_->grad.shape() != node_->value.shape()) {
    node_->grad = Tensor(node_->value.shape(), 0.0);
  }
  return node_->grad;
}

void Var::accumulate(const Tensor& g) const {
  if (!node_->requires_grad) return;
  Tensor& buf = grad_buffer();
  if (g.shape() != buf.shape()) {
    throw ContractError("gradient shape " + g.shape().str() + " does not match value " +
                        buf.shape().str());
  }
  double* dst = buf.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < buf.numel(); ++i) dst[i] += src[i];
}

Var Var::make(Tensor value, std::vector<Var> parents,
              std::function<void(const Tensor&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined()) throw ContractError("backward from undefined Var");
  if (root.value().numel() != 1) {
    throw ContractError("backward root must be scalar, got " + root.shape().str());
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order without recursion depth limits.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].node().get();
      if (p != nullptr && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.numel() == n->value.numel() && n->grad.numel() > 0) {
      n->backward(n->grad);
      n->grad = Tensor();  // interior gradients are never read again
    }
  }
}

}  // namespace seffsal
