#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spaformer/errors.hpp"

namespace spaformer {

/// (batch, channel, height, width) extents of a dense 4-D array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << s.str(); }

/// Dense row-major (b, c, h, w) array. Value type; copies are deep.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<Scalar> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor constant(Shape s, Scalar v) { return Tensor(s, v); }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return data_; }
  std::span<const Scalar> span() const { return data_; }
  std::vector<Scalar>& storage() { return data_; }
  const std::vector<Scalar>& storage() const { return data_; }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }
  Scalar& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    return data_[index(b, ch, y, x)];
  }
  Scalar operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[index(b, ch, y, x)];
  }

  /// Pointer to the start of the (b, ch) spatial plane.
  Scalar* plane(std::size_t b, std::size_t ch) { return data_.data() + (b * shape_.c + ch) * shape_.plane(); }
  const Scalar* plane(std::size_t b, std::size_t ch) const {
    return data_.data() + (b * shape_.c + ch) * shape_.plane();
  }

  /// Batch item b viewed as a C x (H*W) matrix.
  MatrixMap channels_by_pixels(std::size_t b) {
    return MatrixMap(plane(b, 0), static_cast<Eigen::Index>(shape_.c), static_cast<Eigen::Index>(shape_.plane()));
  }
  ConstMatrixMap channels_by_pixels(std::size_t b) const {
    return ConstMatrixMap(plane(b, 0), static_cast<Eigen::Index>(shape_.c),
                          static_cast<Eigen::Index>(shape_.plane()));
  }

  ArrayMap array() { return ArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }
  ConstArrayMap array() const { return ConstArrayMap(data_.data(), static_cast<Eigen::Index>(data_.size())); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(Scalar(0)); }

  Tensor reshaped(Shape s) const {
    if (s.numel() != shape_.numel()) {
      throw ContractViolation("cannot reshape " + shape_.str() + " to " + s.str());
    }
    return Tensor(s, data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  Scalar sum() const {
    Scalar acc(0);
    for (Scalar v : data_) acc += v;
    return acc;
  }

  Scalar max_abs() const {
    Scalar m(0);
    for (Scalar v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

 private:
  Shape shape_{};
  std::vector<Scalar> data_;
};

/// Half-spectrum of a real 2-D transform: (n, c, h, w/2 + 1) complex bins.
template <typename Scalar>
struct ComplexGrid {
  Shape shape;
  std::vector<Scalar> real;
  std::vector<Scalar> imag;

  ComplexGrid() = default;
  explicit ComplexGrid(Shape s) : shape(s), real(s.numel(), Scalar(0)), imag(s.numel(), Scalar(0)) {}

  std::size_t index(std::size_t b, std::size_t ch, std::size_t ky, std::size_t kx) const {
    return ((b * shape.c + ch) * shape.h + ky) * shape.w + kx;
  }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

}  // namespace spaformer
