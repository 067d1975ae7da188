#pragma once

#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "pxiqa/error.hpp"

namespace pxiqa {

using Index = std::int64_t;

// 64-byte aligned blocks recycled by exact size. Training allocates the same
// buffer sizes every step; recycling keeps aligned allocations from fragmenting
// the heap over long runs.
void* acquire_aligned(std::size_t bytes);
void release_aligned(void* p, std::size_t bytes) noexcept;

// 64-byte aligned storage. Vectorized kernels pick their peeling from the address,
// so a fixed alignment keeps results bitwise reproducible across allocations.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(acquire_aligned(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) { release_aligned(p, n * sizeof(T)); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Extents in (batch, channel, height, width) order for images.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> extents);
  explicit Shape(std::vector<Index> extents);

  int rank() const { return static_cast<int>(extents_.size()); }
  Index operator[](int axis) const { return extents_.at(static_cast<std::size_t>(axis)); }
  Index numel() const;
  const std::vector<Index>& extents() const { return extents_; }
  std::string str() const;

  bool operator==(const Shape& other) const = default;

 private:
  std::vector<Index> extents_;
};

// Dense row-major array of reals with an optional same-shape gradient accumulator.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, Buffer<T> values);
  Tensor(Shape shape, const std::vector<T>& values)
      : Tensor(std::move(shape), Buffer<T>(values.begin(), values.end())) {}
  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), Buffer<T>(values)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  const Shape& shape() const { return shape_; }
  Index size() const { return static_cast<Index>(values_.size()); }
  int rank() const { return shape_.rank(); }
  Index dim(int axis) const { return shape_[axis]; }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }

  // NCHW element access; requires rank 4.
  T& at(Index n, Index c, Index h, Index w);
  const T& at(Index n, Index c, Index h, Index w) const;

  bool has_grad() const { return has_grad_; }
  std::span<T> grad();
  std::span<const T> grad() const;
  // Allocates a zero accumulator if absent.
  std::span<T> ensure_grad();
  void zero_grad();
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
    has_grad_ = false;
  }

  bool all_finite() const;
  // Throws NumericError naming `what` when a value is NaN or infinite.
  void check_finite(const std::string& what) const;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    Buffer<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  // Values only; gradients do not participate in equality.
  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  Shape shape_;
  Buffer<T> values_;
  Buffer<T> grad_;
  bool has_grad_ = false;
};

// Throws ShapeError unless `a` and `b` match.
void require_same_shape(const Shape& a, const Shape& b, const char* op);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace pxiqa
