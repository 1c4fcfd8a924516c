#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "seffsal/tensor.hpp"

namespace seffsal {

struct Node;

/// Handle to a value in the reverse-mode tape. Copies share the underlying node.
class Var {
 public:
  Var() = default;
  /// Leaf holding `value`; leaves with `requires_grad` accumulate gradients.
  explicit Var(Tensor value, bool requires_grad = false);

  [[nodiscard]] bool defined() const { return node_ != nullptr; }
  [[nodiscard]] const Tensor& value() const;
  /// Mutable access for parameter updates and perturbation; invalidates any tape built on it.
  [[nodiscard]] Tensor& mutable_value();
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] bool requires_grad() const;

  /// Accumulated gradient; zero-shaped until a backward pass reaches this node.
  [[nodiscard]] const Tensor& grad() const;
  void zero_grad();

  [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

  /// Result node of an operation. `backward` receives the output gradient and must
  /// accumulate into the parents' gradients through `accumulate`.
  static Var make(Tensor value, std::vector<Var> parents,
                  std::function<void(const Tensor& grad_out)> backward);

  /// Adds `g` into this node's gradient buffer (allocating on first use).
  void accumulate(const Tensor& g) const;
  /// Gradient buffer for in-place accumulation by backward closures.
  [[nodiscard]] Tensor& grad_buffer() const;

 private:
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(const Tensor&)> backward;
};

/// Runs reverse-mode accumulation from a scalar (single-element) root.
void backward(const Var& root);

/// While alive, operations record no parents and no closures.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

[[nodiscard]] bool grad_enabled();

}  // namespace seffsal
