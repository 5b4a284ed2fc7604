#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pft/errors.hpp"

namespace pft {

inline std::string shape_to_string(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major n-dimensional array. The single value carrier of the
// project; immutable by convention once produced by a forward pass.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(checked_numel(shape_)), T(0));
  }

  Tensor(std::int64_t rows, std::int64_t cols) : Tensor(std::vector<std::int64_t>{rows, cols}) {}

  static Tensor full(std::vector<std::int64_t> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
  }

  static Tensor from(std::vector<std::int64_t> shape, std::vector<T> data) {
    const std::int64_t n = checked_numel(shape);
    if (static_cast<std::int64_t>(data.size()) != n) {
      throw dimension_error("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_to_string(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t extent(std::int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::int64_t rows() const { require_rank2(); return shape_[0]; }
  std::int64_t cols() const { require_rank2(); return shape_[1]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t r, std::int64_t c) { require_rank2(); return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }
  const T& at(std::int64_t r, std::int64_t c) const { require_rank2(); return data_[static_cast<std::size_t>(r * shape_[1] + c)]; }

  T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    require_rank3();
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    require_rank3();
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  const T* row_ptr(std::int64_t r) const { require_rank2(); return data_.data() + r * shape_[1]; }
  T* row_ptr(std::int64_t r) { require_rank2(); return data_.data() + r * shape_[1]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>::from(shape_, std::move(out));
  }

 private:
  static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) {
      if (e <= 0) throw dimension_error("tensor extents must be positive, got " + shape_to_string(shape));
      n *= e;
    }
    return n;
  }

  void require_rank2() const {
    if (shape_.size() != 2) {
      throw dimension_error("expected a rank-2 tensor, got " + shape_to_string(shape_));
    }
  }

  void require_rank3() const {
    if (shape_.size() != 3) {
      throw dimension_error("expected a rank-3 tensor, got " + shape_to_string(shape_));
    }
  }

  std::vector<std::int64_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace pft
