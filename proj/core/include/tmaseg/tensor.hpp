#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tmaseg {

#ifdef TMASEG_FLOAT64
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::int64_t>;

std::string shape_string(const Shape& shape);
std::int64_t shape_size(const Shape& shape);

// Dense row-major array. Image batches use NHWC layout throughout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Real* ptr() { return data_.data(); }
  const Real* ptr() const { return data_.data(); }
  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }

  Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// Element access for rank-4 NHWC tensors.
  Real& at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }
  Real at(std::int64_t n, std::int64_t y, std::int64_t x, std::int64_t c) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + y) * shape_[2] + x) * shape_[3] + c)];
  }

  void fill(Real value);
  void add_(const Tensor& other);
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<Real> data_;
};

}  // namespace tmaseg
