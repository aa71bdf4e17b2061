#pragma once

// Reverse-mode automatic differentiation over dense NCHW tensors.
//
// Every value is a 4-D float64 tensor. Vectors are stored as (N, D, 1, 1) and
// scalars as (1, 1, 1, 1). A Var is a cheap handle to a graph node; graphs are
// built eagerly by the functions in ops.hpp and released when the last handle
// to the root goes away.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace regen::ad {

struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  static Var leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Var zeros(Shape shape, bool requires_grad = false);
  static Var filled(Shape shape, double v, bool requires_grad = false);
  static Var scalar(double v) { return filled(Shape{}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Empty span when no gradient has reached this node.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  // Seeds d(self)/d(self) = 1; self must be a scalar.
  void backward() const;

  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Builds the node for an op. Inputs and the backward closure are recorded only
// when at least one input requires a gradient and recording is enabled.
Var make_result(Shape shape, std::vector<double> value, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn);

bool grad_enabled();

// Disables graph recording for its lifetime (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace regen::ad
