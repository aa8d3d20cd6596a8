#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "pdenet/errors.hpp"
#include "pdenet/tensor.hpp"

namespace pdenet {

template <typename T>
class Graph;

template <typename T>
struct Node;

/// Receives the finished node (value and upstream gradient) and pushes the
/// gradient into the node's inputs.
template <typename T>
using BackwardFn = std::function<void(const Node<T>&)>;

/// One recorded operation: its output value, the accumulated upstream
/// gradient and the closure that propagates it.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::optional<std::size_t> id;
  BackwardFn<T> backward;

  /// Zero-initialised gradient buffer of this node.
  Tensor<T>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a node. Cheap to copy; the node stays alive while any handle
/// or the owning graph refers to it.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Graph<T>* graph) : node_(std::move(node)), graph_(graph) {}

  bool valid() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  std::optional<std::size_t> id() const { return node_ ? node_->id : std::nullopt; }
  Graph<T>* graph() const noexcept { return graph_; }
  Node<T>* node() const noexcept { return node_.get(); }

 private:
  std::shared_ptr<Node<T>> node_;
  Graph<T>* graph_ = nullptr;
};

/// Append-only tape for reverse-mode differentiation. A graph built with
/// record=false evaluates values only and keeps no history, so intermediate
/// values are released as soon as their handles go away.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  /// Grad-enabled leaf (a plain constant when not recording).
  Var<T> parameter(Tensor<T> value) { return push(std::move(value), record_, {}); }

  /// Records an op output. The backward closure is kept only when at least
  /// one input needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<const Var<T>*> inputs,
                BackwardFn<T> backward) {
    bool needs = false;
    for (const Var<T>* in : inputs) {
      check_owner(*in);
      needs = needs || in->requires_grad();
    }
    needs = needs && record_;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn<T> backward) {
    bool needs = false;
    for (const Var<T>& in : inputs) {
      check_owner(in);
      needs = needs || in.requires_grad();
    }
    needs = needs && record_;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  /// Seeds d(loss)/d(loss) = 1 and walks the tape in reverse append order.
  void backward(const Var<T>& loss) {
    if (!loss.valid() || loss.graph() != this) {
      throw UsageError("backward: loss does not belong to this graph");
    }
    if (!loss.requires_grad() || !loss.id()) {
      throw UsageError("backward: loss is detached from every grad-enabled leaf");
    }
    if (loss.value().size() != 1) {
      throw UsageError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
    }
    for (auto& node : nodes_) node->grad = Tensor<T>();
    loss.node()->grad_buffer()[0] = T{1};
    const std::size_t last = *loss.id();
    for (std::size_t i = last + 1; i-- > 0;) {
      Node<T>& node = *nodes_[i];
      if (node.backward && !node.grad.empty()) node.backward(node);
    }
  }

  /// Gradient of the last backward() w.r.t. a node; zeros when none reached it.
  Tensor<T> grad(const Var<T>& v) const {
    if (!v.valid() || v.graph() != this) throw UsageError("grad: variable from another graph");
    if (v.node()->grad.empty()) return Tensor<T>(v.shape());
    return v.node()->grad;
  }

 private:
  void check_owner(const Var<T>& v) const {
    if (!v.valid()) throw UsageError("operation on an empty variable");
    if (v.graph() != this) throw UsageError("operation mixes variables from different graphs");
  }

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn<T> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->backward = std::move(backward);
    if (record_) {
      node->id = nodes_.size();
      nodes_.push_back(node);
    }
    return Var<T>(std::move(node), this);
  }

  bool record_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

/// Runs `fill` on the gradient buffer of `in` when it participates in differentiation.
template <typename T, typename Fn>
void accumulate(Node<T>* in, Fn&& fill) {
  if (in->requires_grad) fill(in->grad_buffer());
}

}  // namespace pdenet
