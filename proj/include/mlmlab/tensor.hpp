#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmlab/errors.hpp"

namespace mlmlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_to_string(const Shape& shape);

// Dense row-major array. The gradient buffer exists only while
// requires_grad() is set and always has the same length as the values.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    values_.assign(shape_numel(shape_), T{0});
  }

  Tensor(Shape shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    validate_shape();
    if (values_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor: " + std::to_string(values_.size()) +
                       " values do not fill shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.values_.begin(), t.values_.end(), value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return values_.size(); }
  bool empty() const { return shape_.empty(); }

  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }

  // Rank-2 element access.
  T& at(std::size_t row, std::size_t col) { return values_[row * shape_.back() + col]; }
  const T& at(std::size_t row, std::size_t col) const {
    return values_[row * shape_.back() + col];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on) {
      grad_.assign(values_.size(), T{0});
    } else {
      grad_.clear();
    }
  }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), T{0}); }

 private:
  void validate_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> values_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

}  // namespace mlmlab
