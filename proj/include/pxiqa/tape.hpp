#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "pxiqa/tensor.hpp"

namespace pxiqa {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives
// and has not been reset.
template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  std::uint32_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // d(loss)/d(this) after Tape::backward.
  std::span<const T> grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Records executed operations in order and replays their adjoints in reverse.
//
// Three kinds of leaves exist: constants (no gradient), tape-owned leaves whose
// gradient is read back through Var::grad, and parameters bound to an external
// Tensor whose accumulator receives the gradient when backward completes.
template <typename T>
class Tape {
 public:
  // Receives d(loss)/d(output) and accumulates into input gradients via grad_buffer.
  using Adjoint = std::function<void(Tape&, std::span<const T>)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value);
  Var<T> parameter(Tensor<T>& param);

  // Appends an op result. The adjoint is kept only if some input requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Adjoint adjoint);

  const Tensor<T>& value(Var<T> v) const { return node(v).value; }
  bool requires_grad(Var<T> v) const { return node(v).requires_grad; }
  // Zero-initialized on first access; only meaningful for nodes that require grad.
  std::span<T> grad_buffer(Var<T> v);
  std::span<const T> grad(Var<T> v) const;

  // Seeds d(loss)/d(loss) = 1 and propagates to every participating leaf.
  // A second call without reset() is an error.
  void backward(Var<T> loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor<T> value;
    Buffer<T> grad;
    bool requires_grad = false;
    bool is_leaf = false;
    Tensor<T>* bound = nullptr;
    Adjoint adjoint;
  };

  const Node& node(Var<T> v) const;
  Node& node(Var<T> v);
  Var<T> push(Node n);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(*this);
}

template <typename T>
std::span<const T> Var<T>::grad() const {
  return tape_->grad(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pxiqa
