#pragma once

// Reverse-mode differentiation over a recorded list of operations. A Graph
// lives for one forward/backward pass; parameters persist outside it and
// receive their gradients when backward() finishes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "neurokws/nn/tensor.hpp"

namespace nkws::nn {

struct Var {
  std::size_t id = 0;
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Var input(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr, {});
  }

  Var param(Parameter<T>& p) { return push(p.value, true, &p, {}); }

  // Records a computed node. The backward function reads grad(self) and
  // accumulates into the parents' gradients via grad_mut.
  Var record(Tensor<T> value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || nodes_[p.id].requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  const Shape& shape(Var v) const { return nodes_[v.id].value.shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  std::span<const T> grad(Var v) const { return nodes_[v.id].grad; }

  // Zero-initialized on first access.
  std::span<T> grad_mut(Var v) { return ensure_grad(v.id); }
  std::span<T> grad_mut(std::size_t id) { return ensure_grad(id); }
  std::span<const T> grad(std::size_t id) const { return nodes_[id].grad; }

  void backward(Var loss) {
    if (backward_done_) throw UsageError("backward called twice without reset");
    if (nodes_[loss.id].value.size() != 1) throw DimensionError("backward needs a scalar loss");
    backward_done_ = true;
    ensure_grad(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param)
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
    branch_signature_ = 0;
  }

  // Piecewise ops (relu, top-k, clamps) fold their branch choices into this
  // signature when tracking is on, so a finite-difference probe can tell
  // whether a perturbation crossed a kink.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void note_branch(std::uint64_t choice) {
    branch_signature_ = (branch_signature_ ^ choice) * 0x100000001B3ull + 0x9E3779B97F4A7C15ull;
  }
  std::uint64_t branch_signature() const { return branch_signature_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, bool requires_grad, Parameter<T>* p, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, p, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  std::span<T> ensure_grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 0;
};

}  // namespace nkws::nn
