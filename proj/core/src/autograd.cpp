#include "regen/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace regen::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Var Var::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.size()) {
    throw std::invalid_argument("leaf: value count " + std::to_string(values.size()) +
                                " does not match shape " + shape.str());
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Var Var::zeros(Shape shape, bool requires_grad) {
  return leaf(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
}

Var Var::filled(Shape shape, double v, bool requires_grad) {
  return leaf(shape, std::vector<double>(shape.size(), v), requires_grad);
}

double Var::item() const {
  if (size() != 1) throw std::logic_error("item() on non-scalar tensor " + shape().str());
  return node_->value[0];
}

void Var::backward() const {
  if (size() != 1) throw std::logic_error("backward() requires a scalar root");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var make_result(Shape shape, std::vector<double> value, std::vector<Var> inputs,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& v : inputs) any = any || v.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& v : inputs) node->inputs.push_back(v.ptr());
      node->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(node));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace regen::ad
