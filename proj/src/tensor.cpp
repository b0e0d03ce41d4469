#include "attreval/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "attreval/errors.hpp"

namespace attreval {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_product(shape_) != data_.size()) {
    throw ConfigError("tensor shape product " + std::to_string(shape_product(shape_)) +
                      " does not match data length " + std::to_string(data_.size()));
  }
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) return Tensor({0});
  std::vector<std::size_t> shape{items.size()};
  const auto& inner = items.front().shape();
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor out(shape);
  const std::size_t stride = items.front().size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != inner) throw ConfigError("stack: inconsistent sample shapes");
    std::copy(items[i].values().begin(), items[i].values().end(), out.data() + i * stride);
  }
  return out;
}

Tensor unstack(const Tensor& batch, std::size_t index) {
  std::vector<std::size_t> inner(batch.shape().begin() + 1, batch.shape().end());
  Tensor out(inner);
  const std::size_t stride = out.size();
  std::copy_n(batch.data() + index * stride, stride, out.data());
  return out;
}

}  // namespace attreval
