#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <vector>

namespace attreval {

// Vectorized Eigen reductions peel a different number of leading elements
// depending on the buffer address, which changes rounding. A fixed alignment
// keeps results independent of where the heap happens to place a tensor.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// Dense row-major tensor of doubles. Samples are [M, T]; batches [B, M, T].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  Buffer& storage() noexcept { return data_; }
  const Buffer& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 access.
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  bool all_finite() const noexcept;
  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  Buffer data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Stacks equally shaped tensors into one [B, ...] tensor.
Tensor stack(std::span<const Tensor> items);
// Slice `index` out of a batch tensor, dropping the leading axis.
Tensor unstack(const Tensor& batch, std::size_t index);

}  // namespace attreval
