#include "sftmix/dense_array.hpp"

#include <cmath>
#include <string>

#include "sftmix/errors.hpp"

namespace sftmix {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const std::vector<std::size_t>& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("DenseArray: zero-sized dimension");
  }
}

}  // namespace

DenseArray::DenseArray(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_product(shape_), 0.0);
  cols_ = shape_.empty() ? 1 : shape_.back();
}

DenseArray::DenseArray(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_product(shape_)) {
    throw ShapeError("DenseArray: data length " + std::to_string(data_.size()) +
                     " does not match shape product " + std::to_string(shape_product(shape_)));
  }
  cols_ = shape_.empty() ? 1 : shape_.back();
}

DenseArray DenseArray::scalar(double v) { return DenseArray({1}, {v}); }

DenseArray DenseArray::full(std::vector<std::size_t> shape, double v) {
  DenseArray a(std::move(shape));
  a.fill(v);
  return a;
}

std::size_t DenseArray::rows() const {
  if (rank() != 2) throw ShapeError("DenseArray::rows: rank-2 array required");
  return shape_[0];
}

std::size_t DenseArray::cols() const {
  if (rank() != 2) throw ShapeError("DenseArray::cols: rank-2 array required");
  return shape_[1];
}

bool DenseArray::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void DenseArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double DenseArray::scalar_value() const {
  if (size() != 1) throw ContractError("DenseArray::scalar_value: array is not a scalar");
  return data_[0];
}

void check_finite(const DenseArray& a, const char* where) {
  if (!a.all_finite()) {
    throw InvalidInputError(std::string(where) + ": non-finite values");
  }
}

}  // namespace sftmix
