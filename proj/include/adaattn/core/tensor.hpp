// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "adaattn/core/error.hpp"

namespace adaattn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(const Node&)> backward;
  const char* op = "leaf";

  std::vector<float>* grad_sink() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return &grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major float tensor with up to four axes.
///
/// Copies share the underlying node, so a Tensor behaves like a handle to an
/// immutable value. Only leaves may be written through `mutable_data()`;
/// this is how optimizers and loaders fill parameters in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false) {
    require<ShapeError>(!shape.empty() && shape.size() <= 4, "tensor rank must be 1..4, got ",
                        shape.size());
    for (auto extent : shape) require<ShapeError>(extent > 0, "zero extent in ", to_string(shape));
    require<ShapeError>(numel_of(shape) == data.size(), "data length ", data.size(),
                        " does not match shape ", to_string(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    auto n = numel_of(shape);
    return from(std::move(shape), std::vector<float>(n, value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const float> data() const { return node_->data; }
  std::span<float> mutable_data() {
    require<ContractError>(node_->inputs.empty(), "mutable_data() is only valid on leaf tensors");
    return node_->data;
  }
  float operator[](std::size_t i) const { return node_->data[i]; }

  float item() const {
    require<ContractError>(numel() == 1, "item() on tensor of shape ", to_string(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->inputs.empty(); }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  const char* op_name() const { return node_->op; }

  // Same values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->data, false); }

  Tensor reshape(Shape shape) const;

  const detail::NodePtr& node() const { return node_; }
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}

 private:
  detail::NodePtr node_;
};

namespace detail {

// Creates an op result. The node records its inputs only if some input
// needs a gradient and recording is enabled.
inline Tensor make_result(const char* op, Shape shape, std::vector<float> data,
                          std::initializer_list<Tensor> inputs,
                          std::function<void(const Node&)> backward) {
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  bool track = grad_enabled() &&
               std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  auto& node = *out.node();
  node.op = op;
  if (track) {
    node.requires_grad = true;
    for (const auto& t : inputs)
      if (t.defined()) node.inputs.push_back(t.node());
    node.backward = std::move(backward);
  }
  return out;
}

}  // namespace detail

inline Tensor Tensor::reshape(Shape new_shape) const {
  require<ShapeError>(numel_of(new_shape) == numel(), "cannot reshape ", to_string(shape()),
                      " to ", to_string(new_shape));
  auto in = node_;
  return detail::make_result("reshape", std::move(new_shape), in->data, {*this},
                             [in](const detail::Node& self) {
                               if (auto* g = in->grad_sink())
                                 for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                             });
}

/// Populates gradients of every tracked leaf reachable from `loss`.
inline void backward(const Tensor& loss) {
  require<ContractError>(loss.numel() == 1, "backward() needs a scalar loss, got shape ",
                         to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto* root = loss.node().get();
  root->grad_sink();
  root->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

}  // namespace adaattn
