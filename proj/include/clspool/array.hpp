#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clspool/errors.hpp"

namespace clspool {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major array. Training runs on Array<float>; gradient checks and
// oracle tests run on Array<double>.
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;
  explicit Array(Shape shape, T fill = T{0})
      : shape_(validated(std::move(shape))), data_(shape_size(shape_), fill) {}
  Array(Shape shape, std::vector<T> data) : shape_(validated(std::move(shape))), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("array data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
  }

  static Array matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
    return Array({rows, cols}, std::move(data));
  }
  static Array from_rows(const std::vector<std::vector<T>>& rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.back(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  T& at(std::size_t l, std::size_t r, std::size_t c) {
    return data_[(l * shape_[1] + r) * shape_[2] + c];
  }
  const T& at(std::size_t l, std::size_t r, std::size_t c) const {
    return data_[(l * shape_[1] + r) * shape_[2] + c];
  }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zeroed gradient buffer on first use.
  std::vector<T>& grad() {
    if (!grad_) grad_.emplace(data_.size(), T{0});
    return *grad_;
  }
  const std::vector<T>& grad() const { return grad_.value(); }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T{0});
  }
  void drop_grad() { grad_.reset(); }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Shape validated(Shape shape) {
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("array extents must be positive, got " + shape_to_string(shape));
    }
    return shape;
  }

  Shape shape_;
  std::vector<T> data_;
  std::optional<std::vector<T>> grad_;
};

template <typename T>
Array<T> Array<T>::from_rows(const std::vector<std::vector<T>>& rows) {
  if (rows.empty() || rows.front().empty()) throw DimensionError("from_rows needs a nonempty matrix");
  const std::size_t cols = rows.front().size();
  std::vector<T> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged rows in from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Array({rows.size(), cols}, std::move(data));
}

}  // namespace clspool
