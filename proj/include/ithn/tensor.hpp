#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace ithn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Most primitives treat it as a matrix;
// vectors are 1 x n rows and scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }
  static Tensor row(std::span<const double> v);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  // For rank-2 tensors; rank-1 is treated as a single row.
  std::size_t rows() const {
    if (shape_.size() == 2) return shape_[0];
    if (shape_.size() == 1) return 1;
    not_a_matrix("rows");
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    not_a_matrix("cols");
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  double item() const;
  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const = default;

 private:
  [[noreturn]] void not_a_matrix(const char* what) const;

  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& shape);

}  // namespace ithn
