#pragma once

#include <cstddef>
#include <vector>

namespace sftmix {

// Row-major dense array of doubles. All public operations leave the data
// finite; producers call check_finite() on their results.
class DenseArray {
 public:
  DenseArray() = default;

  // Zero-filled array of the given shape. Dimensions must be positive.
  explicit DenseArray(std::vector<std::size_t> shape);
  DenseArray(std::vector<std::size_t> shape, std::vector<double> data);

  static DenseArray scalar(double v);
  static DenseArray full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 2-D accessors; contract-checked rank in debug paths only (hot loops index
  // flat via data()).
  std::size_t rows() const;
  std::size_t cols() const;
  double at2(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& at2(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  bool same_shape(const DenseArray& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v);

  // Value of a single-element array; ContractError otherwise.
  double scalar_value() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::size_t cols_ = 0;  // cached last dimension for at2
};

// Throws InvalidInputError when any element is NaN or Inf.
void check_finite(const DenseArray& a, const char* where);

std::size_t shape_product(const std::vector<std::size_t>& shape);

}  // namespace sftmix
