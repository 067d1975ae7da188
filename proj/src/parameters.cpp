#include "pxiqa/parameters.hpp"

#include <algorithm>

namespace pxiqa {

template <typename T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

template <typename T>
Tensor<T>& ParameterSet<T>::get(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

template <typename T>
const Tensor<T>& ParameterSet<T>::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw InvalidArgument("unknown parameter '" + name + "'");
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == name; });
}

template <typename T>
Index ParameterSet<T>::parameter_count() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
bool ParameterSet<T>::same_values(const ParameterSet& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!(entries_[i].tensor == other.entries_[i].tensor)) return false;
  }
  return true;
}

template class ParameterSet<float>;
template class ParameterSet<double>;

}  // namespace pxiqa
