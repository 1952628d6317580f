#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace micronas::ad {

/// Dimensions plus the element bit-width used for deployment accounting.
/// Training values are always held as doubles; element_bits only affects
/// byte counts reported by the resource models.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims, int element_bits = 32);
  explicit Shape(std::vector<std::int64_t> dims, int element_bits = 32);

  const std::vector<std::int64_t>& dims() const { return dims_; }
  std::int64_t dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  int element_bits() const { return element_bits_; }
  std::int64_t numel() const;

  bool operator==(const Shape& other) const { return dims_ == other.dims_; }
  std::string str() const;

 private:
  std::vector<std::int64_t> dims_;
  int element_bits_ = 32;
};

/// Tape entry. Each node owns its forward value and links to the nodes it
/// was computed from; reverse traversal goes through `parents`.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    grad[i] += g;
  }
  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// Handle to a tape node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }
  std::span<const double> values() const { return node_->value; }
  // Only meaningful on leaves; mutating an interior node does not replay the tape.
  std::span<double> mutable_values() { return node_->value; }
  double item() const;
  double at(std::size_t i) const { return node_->value.at(i); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient values; all zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad() { node_->grad.clear(); }
  const std::string& op() const { return node_->op; }

  /// Copy of the value with no history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Creates an interior node. `backward` receives the new node and must push
/// its grad into the parents' grads.
Tensor make_result(const std::string& op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward);

/// Reverse-mode sweep from a scalar. Interior gradients are rebuilt on every
/// call; leaf gradients accumulate until zero_grad().
void backward(const Tensor& loss);

/// Nodes reachable from `root` in topological order (inputs first).
std::vector<std::shared_ptr<Node>> topo_order(const Tensor& root);

}  // namespace micronas::ad
