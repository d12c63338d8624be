#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "levelseg/ad/tensor.hpp"

namespace levelseg::ad {

template <typename T>
class Tape;

/// Handle to a forward value. Constants carry no tape; tracked values point
/// at the node that produced them. Buffers are immutable once wrapped.
template <typename T>
class Value {
 public:
  Value() = default;
  Value(std::shared_ptr<const Tensor<T>> t, Tape<T>* tape, int node)
      : t_(std::move(t)), tape_(tape), node_(node) {}

  /// Untracked constant (no gradient flows into it).
  static Value constant(Tensor<T> t) {
    return Value(std::make_shared<const Tensor<T>>(std::move(t)), nullptr, -1);
  }
  static Value scalar(T v) { return constant(Tensor<T>::scalar(v)); }

  const Tensor<T>& tensor() const { return *t_; }
  const std::shared_ptr<const Tensor<T>>& ptr() const { return t_; }
  const Shape& shape() const { return t_->shape; }
  Tape<T>* tape() const { return tape_; }
  int node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }

 private:
  std::shared_ptr<const Tensor<T>> t_;
  Tape<T>* tape_ = nullptr;
  int node_ = -1;
};

/// Gradient buffers keyed by node id, produced by Tape::backward.
template <typename T>
class Gradients {
 public:
  explicit Gradients(size_t n) : grads_(n) {}

  bool has(const Value<T>& v) const {
    return v.node() >= 0 && v.node() < static_cast<int>(grads_.size()) &&
           !grads_[v.node()].data.empty();
  }
  const Tensor<T>& at(const Value<T>& v) const {
    if (!has(v)) throw Error("no gradient recorded for node " + std::to_string(v.node()));
    return grads_[v.node()];
  }

  Tensor<T>& slot(int node, const Shape& s) {
    Tensor<T>& g = grads_[node];
    if (g.data.empty()) {
      g = Tensor<T>(s);
    } else if (g.shape != s) {
      throw ShapeError("gradient shape " + g.shape.str() + " vs expected " + s.str());
    }
    return g;
  }
  Tensor<T>* peek(int node) {
    return grads_[node].data.empty() ? nullptr : &grads_[node];
  }
  void release(int node) {
    grads_[node] = Tensor<T>();
  }

 private:
  std::vector<Tensor<T>> grads_;
};

/// Append-only record of the forward computation. Nodes hold their input ids
/// and a closure that scatters the output gradient back to those inputs.
/// Single-threaded per instance; rebuilt for every training step.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>& gout, Gradients<T>& grads)>;

  /// Tracked input; gradients accumulate here during backward().
  Value<T> leaf(Tensor<T> t) {
    auto p = std::make_shared<const Tensor<T>>(std::move(t));
    return leaf(p);
  }
  Value<T> leaf(std::shared_ptr<const Tensor<T>> p) {
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, nullptr, p->shape, true});
    return Value<T>(std::move(p), this, id);
  }

  /// Interior node. Inputs must already live on this tape (topological order
  /// holds by construction). Returns the node id.
  int record(std::vector<int> inputs, Shape out_shape, BackwardFn fn) {
    int id = static_cast<int>(nodes_.size());
    for (int in : inputs)
      if (in >= id) throw Error("tape input id out of order");
    nodes_.push_back(Node{std::move(inputs), std::move(fn), out_shape, false});
    return id;
  }

  size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Deterministic: nodes processed in
  /// strict reverse emission order, accumulation order fixed by the kernels.
  /// With keep_all=false, interior gradient buffers are released as soon as
  /// they have been consumed; leaf gradients are always retained.
  Gradients<T> backward(const Value<T>& loss, bool keep_all = true) {
    if (loss.tape() != this) throw Error("loss does not belong to this tape");
    if (loss.shape().numel() != 1)
      throw ShapeError("backward() requires a scalar loss, got shape " + loss.shape().str());

    Gradients<T> grads(nodes_.size());
    grads.slot(loss.node(), loss.shape()).data[0] = T(1);

    for (int i = loss.node(); i >= 0; --i) {
      Tensor<T>* g = grads.peek(i);
      if (!g) continue;
      const Node& n = nodes_[i];
      if (n.backward) n.backward(*g, grads);
      if (!keep_all && !n.is_leaf) grads.release(i);
    }
    return grads;
  }

  bool is_leaf(int node) const { return nodes_[node].is_leaf; }

 private:
  struct Node {
    std::vector<int> inputs;
    BackwardFn backward;
    Shape out_shape;
    bool is_leaf;
  };
  std::vector<Node> nodes_;
};

}  // namespace levelseg::ad
