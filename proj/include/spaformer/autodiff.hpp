#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "spaformer/tensor.hpp"

namespace spaformer {

namespace detail {
inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables recording for its lifetime (inference, detached evaluations).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(Node&)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t order = detail::node_counter().fetch_add(1, std::memory_order_relaxed);

  Tensor<Scalar>& grad_buffer() {
    if (grad.size() != value.size() || !(grad.shape() == value.shape())) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
  bool has_grad() const { return grad.size() == value.size() && !value.empty(); }
};

/// Handle to a value on the recorded tape. Cheap to copy; copies alias.
template <typename Scalar>
class Var {
 public:
  using NodeT = Node<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Gradient accumulated by backward(); zeros when nothing has flowed in.
  Tensor<Scalar> grad() const { return node_->has_grad() ? node_->grad : Tensor<Scalar>(shape()); }

  const std::shared_ptr<NodeT>& node() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

/// Leaf that never receives gradient.
template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  return Var<Scalar>(std::move(n));
}

/// Leaf that accumulates gradient.
template <typename Scalar>
Var<Scalar> leaf(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->grad_buffer();
  return Var<Scalar>(std::move(n));
}

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& v) {
  return constant(v.value());
}

/// Records an operation result. `backward` reads node.grad and accumulates into
/// node.parents[i]->grad_buffer() for each parent that requires grad.
template <typename Scalar>
Var<Scalar> record(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs, typename Node<Scalar>::BackwardFn backward) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  n->is_leaf = false;
  if (!grad_enabled()) return Var<Scalar>(std::move(n));
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var<Scalar>& v) { return v.requires_grad(); });
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& v : inputs) n->parents.push_back(v.node());
    n->backward = std::move(backward);
  }
  return Var<Scalar>(std::move(n));
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are released afterwards.
template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (loss.size() != 1) {
    throw ContractViolation("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  if (!loss.requires_grad()) return;

  std::vector<Node<Scalar>*> nodes;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<Node<Scalar>*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node<Scalar>* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad) stack.push_back(p.get());
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](const Node<Scalar>* a, const Node<Scalar>* b) { return a->order > b->order; });

  loss.node()->grad_buffer()[0] += Scalar(1);
  for (Node<Scalar>* n : nodes) {
    if (n->is_leaf || !n->backward || !n->has_grad()) continue;
    n->backward(*n);
  }
  for (Node<Scalar>* n : nodes) {
    if (!n->is_leaf) n->grad = Tensor<Scalar>();
  }
}

/// A named learnable tensor with its gradient accumulator.
template <typename Scalar>
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor<Scalar> value) : name_(std::move(name)), var_(leaf(std::move(value))) {}

  const std::string& name() const { return name_; }
  const Shape& shape() const { return var_.shape(); }
  const Var<Scalar>& var() const { return var_; }
  operator const Var<Scalar>&() const { return var_; }  // NOLINT: parameters feed ops directly

  Tensor<Scalar>& value() { return var_.node()->value; }
  const Tensor<Scalar>& value() const { return var_.node()->value; }
  Tensor<Scalar>& grad() { return var_.node()->grad_buffer(); }
  const Tensor<Scalar>& grad() const { return var_.node()->grad; }

  void zero_grad() { grad().set_zero(); }
  bool defined() const { return var_.defined(); }

 private:
  std::string name_;
  Var<Scalar> var_;
};

}  // namespace spaformer
