#include "pxiqa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <unordered_map>

namespace pxiqa {

namespace {

constexpr std::align_val_t kAlign{64};
constexpr std::size_t kPoolLimit = std::size_t{1} << 30;  // cached bytes beyond this are freed

struct BlockPool {
  std::mutex mutex;
  std::unordered_map<std::size_t, std::vector<void*>> free_blocks;
  std::size_t cached = 0;
};

BlockPool& pool() {
  static BlockPool* p = new BlockPool;  // never destroyed: tensors may outlive static teardown
  return *p;
}

}  // namespace

void* acquire_aligned(std::size_t bytes) {
  if (bytes == 0) bytes = 1;
  BlockPool& p = pool();
  {
    std::lock_guard lock(p.mutex);
    auto it = p.free_blocks.find(bytes);
    if (it != p.free_blocks.end() && !it->second.empty()) {
      void* block = it->second.back();
      it->second.pop_back();
      p.cached -= bytes;
      return block;
    }
  }
  return ::operator new(bytes, kAlign);
}

void release_aligned(void* block, std::size_t bytes) noexcept {
  if (block == nullptr) return;
  if (bytes == 0) bytes = 1;
  BlockPool& p = pool();
  try {
    std::lock_guard lock(p.mutex);
    if (p.cached + bytes <= kPoolLimit) {
      p.free_blocks[bytes].push_back(block);
      p.cached += bytes;
      return;
    }
  } catch (...) {
    // bookkeeping failed: fall through and free
  }
  ::operator delete(block, kAlign);
}

Shape::Shape(std::initializer_list<Index> extents) : extents_(extents) {
  for (Index e : extents_) {
    if (e < 0) throw ShapeError("negative extent in shape " + str());
  }
}

Shape::Shape(std::vector<Index> extents) : extents_(std::move(extents)) {
  for (Index e : extents_) {
    if (e < 0) throw ShapeError("negative extent in shape " + str());
  }
}

Index Shape::numel() const {
  Index n = 1;
  for (Index e : extents_) n *= e;
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < extents_.size(); ++i) {
    if (i) os << 'x';
    os << extents_[i];
  }
  os << ']';
  return os.str();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), values_(static_cast<std::size_t>(shape_.numel()), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, Buffer<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (static_cast<Index>(values_.size()) != shape_.numel()) {
    throw ShapeError("tensor " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                     " values, got " + std::to_string(values_.size()));
  }
}

template <typename T>
T& Tensor<T>::at(Index n, Index c, Index h, Index w) {
  return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

template <typename T>
const T& Tensor<T>::at(Index n, Index c, Index h, Index w) const {
  return values_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!has_grad_) throw Error("tensor " + shape_.str() + " has no gradient");
  return grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad_) throw Error("tensor " + shape_.str() + " has no gradient");
  return grad_;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() {
  if (!has_grad_) {
    grad_.assign(values_.size(), T(0));
    has_grad_ = true;
  }
  return grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (has_grad_) std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i) +
                         " of " + shape_.str());
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(std::move(shape), values_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pxiqa
