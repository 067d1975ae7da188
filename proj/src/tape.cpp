#include "pxiqa/tape.hpp"

#include <algorithm>

namespace pxiqa {

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var<T> v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
  return nodes_[v.id_];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var<T> v) {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw Error("variable does not belong to this tape");
  return nodes_[v.id_];
}

template <typename T>
Var<T> Tape<T>::push(Node n) {
  if (backward_done_) throw Error("stale tape: backward already ran; reset() before recording");
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = true;
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T>& param) {
  Node n;
  n.value = Tensor<T>(param.shape(), Buffer<T>(param.values().begin(), param.values().end()));
  n.is_leaf = true;
  n.requires_grad = true;
  n.bound = &param;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Adjoint adjoint) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](Var<T> v) { return node(v).requires_grad; });
  if (n.requires_grad) n.adjoint = std::move(adjoint);
  return push(std::move(n));
}

template <typename T>
std::span<T> Tape<T>::grad_buffer(Var<T> v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.value.size()), T(0));
  return n.grad;
}

template <typename T>
std::span<const T> Tape<T>::grad(Var<T> v) const {
  const Node& n = node(v);
  if (!backward_done_) throw Error("gradient requested before backward()");
  if (!n.requires_grad) throw Error("gradient requested for a value that does not require one");
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (backward_done_) throw Error("stale tape: backward already ran; reset() before reuse");
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + root.value.shape().str());
  }
  if (root.requires_grad) {
    grad_buffer(loss)[0] = T(1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.adjoint || n.grad.empty()) continue;
      n.adjoint(*this, std::span<const T>(n.grad));
    }
  }
  for (Node& n : nodes_) {
    if (!n.is_leaf || !n.requires_grad) continue;
    if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.value.size()), T(0));
    if (n.bound != nullptr) {
      auto acc = n.bound->ensure_grad();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
    }
  }
  backward_done_ = true;
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace pxiqa
