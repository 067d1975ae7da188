#pragma once

#include <deque>
#include <map>
#include <string>

#include "pxiqa/tape.hpp"

namespace pxiqa {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Ordered, name-addressable collection of learnable tensors. References returned by
// add() and get() stay valid while the set is alive (entries are never moved).
template <typename T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor);
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  Index parameter_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  NamedTensor<T>& operator[](std::size_t i) { return entries_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return entries_[i]; }

  void zero_grad();
  // Values equal entry by entry (names and shapes included); gradients ignored.
  bool same_values(const ParameterSet& other) const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
    return out;
  }

 private:
  std::deque<NamedTensor<T>> entries_;
};

// Puts parameters on a tape either as trainable leaves (gradients accumulate into the
// tensors) or frozen constants.
template <typename T>
Var<T> bind(Tape<T>& tape, Tensor<T>& param, bool trainable) {
  return trainable ? tape.parameter(param) : tape.constant(param);
}

// Every entry of a set bound onto one tape, addressable by name.
template <typename T>
class BoundParameters {
 public:
  BoundParameters() = default;
  BoundParameters(Tape<T>& tape, ParameterSet<T>& params, bool trainable) {
    for (auto& e : params) vars_.emplace(e.name, bind(tape, e.tensor, trainable));
  }
  Var<T> operator[](const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw InvalidArgument("no bound parameter named '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  void set(const std::string& name, Var<T> var) { vars_[name] = var; }

 private:
  std::map<std::string, Var<T>> vars_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace pxiqa
