#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cardioseg {

/// Raised when operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_volume(const Shape& shape);

/**
 * Dense row-major tensor of order 1 to 4.
 *
 * Four-dimensional tensors use batch x channel x height x width layout; the
 * NCHW accessors below require rank 4. A zero extent is permitted so that an
 * empty channel block can take part in channel concatenation.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> values);

  static Tensor nchw(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{0}) {
    return Tensor(Shape{n, c, h, w}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t batch() const { return dim4(0); }
  std::size_t channels() const { return dim4(1); }
  std::size_t height() const { return dim4(2); }
  std::size_t width() const { return dim4(3); }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Pointer to the start of plane (n, c) of a rank-4 tensor.
  T* plane(std::size_t n, std::size_t c) noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_[1] + c) * shape_[2] * shape_[3];
  }

  void fill(T value);
  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t dim4(std::size_t axis) const;

  Shape shape_;
  std::vector<T> data_;
};

/// Throws ShapeError unless `t` has rank 4.
template <typename T>
void require_nchw(const Tensor<T>& t, const char* what);

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cardioseg
