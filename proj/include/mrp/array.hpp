#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mrp/error.hpp"

namespace mrp {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major float64 storage. The value type under every autodiff node.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(mrp::numel(shape_)), fill) {
    for (auto e : shape_) require(e >= 0, ErrorKind::invalid_shape, "negative extent");
  }
  Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (!(static_cast<std::int64_t>(data_.size()) == mrp::numel(shape_))) fail(ErrorKind::invalid_shape,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }
  static Array matrix(std::int64_t rows, std::int64_t cols, std::vector<double> data) {
    return Array(Shape{rows, cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }

  // Matrix view: leading extents collapsed into rows, last extent is columns.
  std::int64_t rows() const { return shape_.empty() ? 1 : numel() / std::max<std::int64_t>(cols(), 1); }
  std::int64_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) { return data_[static_cast<std::size_t>(r * cols() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data_[static_cast<std::size_t>(r * cols() + c)]; }

  std::span<double> row(std::int64_t r) { return {data_.data() + r * cols(), static_cast<std::size_t>(cols())}; }
  std::span<const double> row(std::int64_t r) const {
    return {data_.data() + r * cols(), static_cast<std::size_t>(cols())};
  }

  double item() const {
    if (!(data_.size() == 1)) fail(ErrorKind::invalid_shape, "item() on non-scalar " + shape_str(shape_));
    return data_[0];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  // A default-constructed array has rank 0 but no storage, unlike a scalar.
  bool same_shape(const Array& o) const { return shape_ == o.shape_ && data_.size() == o.data_.size(); }

  Array reshaped(Shape shape) const {
    if (!(mrp::numel(shape) == numel())) fail(ErrorKind::invalid_shape,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Array(std::move(shape), data_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Array& operator+=(const Array& o) {
    if (!(same_shape(o))) fail(ErrorKind::invalid_shape, "+= " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Array& operator-=(const Array& o) {
    if (!(same_shape(o))) fail(ErrorKind::invalid_shape, "-= " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Array& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Array operator+(Array a, const Array& b) { return a += b; }
  friend Array operator-(Array a, const Array& b) { return a -= b; }
  friend Array operator*(Array a, double s) { return a *= s; }
  friend bool operator==(const Array& a, const Array& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Array& a, const Array& b) {
  require(a.same_shape(b), ErrorKind::invalid_shape, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Root-mean-square magnitude per entry.
inline double rms(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

inline double frobenius(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace mrp
