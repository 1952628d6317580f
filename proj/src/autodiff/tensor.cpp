#include "micronas/autodiff/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "micronas/errors.hpp"

namespace micronas::ad {

namespace {

void validate_shape(const std::vector<std::int64_t>& dims, int bits) {
  if (dims.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (auto d : dims) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
  }
  if (bits != 32 && bits != 8 && bits != 4) {
    throw ShapeError("element bit-width must be one of 32, 8, 4; got " + std::to_string(bits));
  }
}

void check_finite(const std::string& op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite value produced by " + op);
  }
}

}  // namespace

Shape::Shape(std::initializer_list<std::int64_t> dims, int element_bits)
    : Shape(std::vector<std::int64_t>(dims), element_bits) {}

Shape::Shape(std::vector<std::int64_t> dims, int element_bits)
    : dims_(std::move(dims)), element_bits_(element_bits) {
  validate_shape(dims_, element_bits_);
}

std::int64_t Shape::numel() const {
  std::int64_t n = 1;
  for (auto d : dims_) n *= d;
  return dims_.empty() ? 0 : n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  return from(shape, std::vector<double>(static_cast<std::size_t>(shape.numel()), v), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape.str());
  }
  check_finite("tensor construction", values);
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(Shape{1}, {v}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape().str());
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
  return node_->grad;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor make_result(const std::string& op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  if (static_cast<std::int64_t>(value.size()) != shape.numel()) {
    throw ShapeError(op + ": internal shape/value mismatch");
  }
  check_finite(op, value);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  n->op = op;
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->backward = std::move(backward_fn);
  return Tensor::wrap(std::move(n));
}

std::vector<std::shared_ptr<Node>> topo_order(const Tensor& root) {
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS; deep supernets would overflow a recursive walk.
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (seen.insert(parent.get()).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward on an undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + loss.shape().str());
  if (!loss.requires_grad()) return;
  auto order = topo_order(loss);
  for (auto& n : order) {
    if (!n->leaf) n->grad.clear();
  }
  loss.node()->accumulate(0, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.leaf || !n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
}

}  // namespace micronas::ad
