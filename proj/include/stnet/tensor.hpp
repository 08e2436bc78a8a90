#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stnet/error.hpp"

namespace stnet {

using Shape = std::vector<std::int64_t>;

enum class DType { F32, F64 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }

std::string_view to_string(DType dtype);
DType parse_dtype(std::string_view name);

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array. Value semantics: copies copy the buffer.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor from(std::initializer_list<T> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  T& at(std::initializer_list<std::int64_t> index);
  const T& at(std::initializer_list<std::int64_t> index) const;

  // Same buffer, new shape; numel must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(T value);
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::int64_t offset(std::initializer_list<std::int64_t> index) const;

  Shape shape_;
  std::vector<T> data_;
};

// Bitwise equality of buffers (distinguishes -0.0 and NaN payloads).
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

// max |a - b| / max |b|; 0 when both are all-zero.
template <typename T>
double relative_linf(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace stnet
