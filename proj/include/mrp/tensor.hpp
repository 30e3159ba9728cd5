#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrp/array.hpp"

namespace mrp {

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct Node {
  Array value;
  Array grad;  // empty until first touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  Array& grad_buffer() {
    if (!grad.same_shape(value)) grad = Array(value.shape());
    return grad;
  }
};

// Handle to a value in the autodiff graph. Copies share the node.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<Node>()) {}
  explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(Array value) { return Tensor(std::move(value), true); }

  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t rows() const { return node_->value.rows(); }
  std::int64_t cols() const { return node_->value.cols(); }
  std::int64_t numel() const { return node_->value.numel(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // True once backward (or mutable_grad) has allocated the accumulator.
  bool has_grad() const { return node_->grad.same_shape(node_->value) && node_->value.numel() > 0; }
  Array grad() const { return has_grad() ? node_->grad : Array(node_->value.shape()); }
  Array& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Array(); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  // Creates an op output. The backward closure and parents are only kept when
  // grad mode is on and at least one input is tracked.
  static Tensor from_op(Array value, std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
    Tensor out(std::move(value));
    if (!grad_enabled()) return out;
    bool track = false;
    for (const auto& in : inputs) track = track || in.requires_grad();
    if (!track) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(inputs.size());
    for (auto& in : inputs) out.node_->parents.push_back(in.node_);
    out.node_->backward_fn = std::move(backward_fn);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

// Reverse-mode sweep from a scalar loss. Interior gradients are recomputed on
// every call; leaf gradients accumulate.
inline void backward(const Tensor& loss) {
  if (!(loss.numel() == 1)) fail(ErrorKind::invalid_shape, "backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) n->grad = Array(n->value.shape());
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward_fn(*n);
  }
}

inline void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace mrp
