#pragma once

#include "poseforge/autodiff/tensor.hpp"

#include <functional>
#include <vector>

namespace poseforge::ad {

/// Handle to a node recorded on a Graph.
struct Var {
  int id = -1;
};

/// Tape of operations recorded in execution order, which is a topological
/// order; backward() walks it in reverse.
template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  explicit Graph(bool training = false) : training_(training) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const { return training_; }

  /// Constant leaf. With requires_grad the gradient is kept for inspection.
  Var input(Tensor<T> value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var param(Parameter<T>& p) {
    Var v = push(p.value, true, nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  /// Records an op result. The backward closure receives the output
  /// gradient and distributes it through accumulate().
  /// Parents with a negative id (absent optional inputs) are ignored.
  Var record(Tensor<T> value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (Var p : parents) needs = needs || (p.id >= 0 && nodes_.at(p.id).needs_grad);
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool needs_grad(Var v) const { return v.id >= 0 && nodes_.at(v.id).needs_grad; }

  /// Gradient of a node after backward(); zeros when nothing reached it.
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.numel() ? n.grad : Tensor<T>(n.value.shape());
  }

  /// Gradient buffer of a parent, allocated on first use.
  Tensor<T>& accumulate(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.numel() == 0 && n.value.numel() != 0) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  void backward(Var loss) {
    auto& root = nodes_.at(loss.id);
    if (root.value.numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
    }
    accumulate(loss).fill(T(1));
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.needs_grad || n.grad.numel() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto& g = n.param->grad.vec();
        const auto& src = n.grad.vec();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Tensor<T> value, bool needs_grad, BackwardFn backward) {
    if (!value.all_finite()) {
      throw NumericalError("non-finite value produced at graph node " +
                           std::to_string(nodes_.size()));
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool training_;
  std::vector<Node> nodes_;
};

}  // namespace poseforge::ad
