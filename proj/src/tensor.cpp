#include "ithn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ithn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("Tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::row(std::span<const double> v) { return Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end())); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t ncols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != ncols) throw std::invalid_argument("Tensor::matrix: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), ncols}, std::move(data));
}

void Tensor::not_a_matrix(const char* what) const {
  throw std::logic_error(std::string("Tensor::") + what + ": rank " + std::to_string(shape_.size()) + " is not a matrix");
}

double Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("Tensor::item: tensor of shape " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size())
    throw std::invalid_argument("Tensor::reshaped: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

}  // namespace ithn
