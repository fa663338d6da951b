#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "deskmvs/numerics/errors.hpp"

namespace deskmvs {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage precision tag. Arithmetic is always carried out in 64-bit; a
// kFloat32 tensor holds values rounded to float and serializes 4-byte words.
enum class DType : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

// Dense row-major array of doubles with an explicit shape. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::initializer_list<std::int64_t> index);
  double at(std::initializer_list<std::int64_t> index) const;
  double item() const;

  Tensor reshape(Shape shape) const&;
  Tensor reshape(Shape shape) &&;

  DType dtype() const noexcept { return dtype_; }
  // Switching to kFloat32 rounds every stored value to float precision.
  void set_dtype(DType dtype);

  void fill(double v);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

 private:
  std::int64_t offset(std::initializer_list<std::int64_t> index) const;

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::kFloat64;
};

// Throws NumericError naming `what` when t holds NaN or Inf.
void require_finite(const Tensor& t, const std::string& what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace deskmvs
