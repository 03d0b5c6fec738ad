#include "cardioseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace cardioseg {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_rank(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw ShapeError("tensor rank must be between 1 and 4, got shape " + shape_string(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(shape_volume(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
  check_rank(shape_);
  if (shape_volume(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

template <typename T>
std::size_t Tensor<T>::extent(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

template <typename T>
std::size_t Tensor<T>::dim4(std::size_t axis) const {
  if (shape_.size() != 4) throw ShapeError("expected an NCHW tensor, got shape " + shape_string(shape_));
  return shape_[axis];
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_nchw(const Tensor<T>& t, const char* what) {
  if (t.rank() != 4)
    throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_string(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template class Tensor<float>;
template class Tensor<double>;
template void require_nchw(const Tensor<float>&, const char*);
template void require_nchw(const Tensor<double>&, const char*);
template void require_same_shape(const Tensor<float>&, const Tensor<float>&, const char*);
template void require_same_shape(const Tensor<double>&, const Tensor<double>&, const char*);

}  // namespace cardioseg
