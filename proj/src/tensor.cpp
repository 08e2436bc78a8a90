#include "stnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace stnet {

std::string_view to_string(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32" || name == "float32") return DType::F32;
  if (name == "f64" || name == "float64") return DType::F64;
  throw ValidationError("unknown dtype '" + std::string(name) + "' (expected f32 or f64)");
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("shape " + shape_str(shape) + " has a non-positive dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor shape " + shape_str(shape_) + " does not match buffer length " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::from(std::initializer_list<T> values) {
  return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<T>(values));
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
std::int64_t Tensor<T>::offset(std::initializer_list<std::int64_t> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw ShapeError("index rank " + std::to_string(index.size()) + " != tensor rank " + std::to_string(rank()));
  }
  std::int64_t off = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[a]) {
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " + std::to_string(a));
    }
    off = off * shape_[a] + i;
    ++a;
  }
  return off;
}

template <typename T>
T& Tensor<T>::at(std::initializer_list<std::int64_t> index) {
  return data_[static_cast<std::size_t>(offset(index))];
}

template <typename T>
const T& Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  return data_[static_cast<std::size_t>(offset(index))];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) && {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), static_cast<std::size_t>(a.numel()) * sizeof(T)) == 0;
}

template <typename T>
double relative_linf(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("relative_linf: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double diff = 0.0;
  double scale = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale = std::max(scale, std::abs(static_cast<double>(b[i])));
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

template class Tensor<float>;
template class Tensor<double>;
template bool bitwise_equal(const Tensor<float>&, const Tensor<float>&);
template bool bitwise_equal(const Tensor<double>&, const Tensor<double>&);
template double relative_linf(const Tensor<float>&, const Tensor<float>&);
template double relative_linf(const Tensor<double>&, const Tensor<double>&);

}  // namespace stnet
