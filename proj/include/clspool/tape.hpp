#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "clspool/array.hpp"

namespace clspool {

template <typename T>
class Tape;

// Handle to a node recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Array<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of executed operations. Node ids are assigned in execution
// order, so inputs always precede their consumers and a single reverse sweep
// visits every node once.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const std::vector<T>& out_grad)>;

  explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Array<T> value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
  }

  // Binds an external parameter; its gradient is accumulated into param.grad()
  // by backward(). The parameter must outlive the tape.
  Var<T> parameter(Array<T>& param) {
    Node n;
    n.external = &param;
    n.requires_grad = true;
    return push(std::move(n));
  }

  Var<T> record(Array<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var<T> record(Array<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    if (check_finite_ && !value.all_finite()) {
      throw EvaluationError("non-finite value produced by tape node " + std::to_string(nodes_.size()));
    }
    Node n;
    n.owned = std::move(value);
    for (const Var<T>& in : inputs) {
      if (&in.tape() != this) throw Error("operands recorded on different tapes");
      if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Array<T>& value(std::size_t id) const {
    const Node& n = nodes_.at(id);
    return n.external ? *n.external : n.owned;
  }

  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator of a node; allocated on first touch during backward.
  std::vector<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(value(id).size(), T{0});
    return n.grad;
  }

  // Gradient of the backward root with respect to v; empty if v was not reached.
  std::span<const T> grad(Var<T> v) const { return nodes_.at(v.id()).grad; }

  void backward(Var<T> root) {
    if (root.value().size() != 1) {
      throw DimensionError("backward root must be a scalar, got shape " + shape_to_string(root.shape()));
    }
    backward(root, std::vector<T>{T{1}});
  }

  void backward(Var<T> root, std::vector<T> seed) {
    if (backward_done_) throw Error("backward already ran on this tape");
    backward_done_ = true;
    if (seed.size() != root.value().size()) throw DimensionError("backward seed size mismatch");
    if (!nodes_[root.id()].requires_grad) return;
    nodes_[root.id()].grad = std::move(seed);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.external) {
        std::vector<T>& sink = n.external->grad();
        for (std::size_t j = 0; j < sink.size(); ++j) sink[j] += n.grad[j];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Array<T> owned;
    Array<T>* external = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
    BackwardFn backward;
  };

  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
  bool backward_done_ = false;
};

}  // namespace clspool
