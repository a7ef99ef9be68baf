#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace oslo {

// Dense row-major matrix of doubles. Rows index pixels, columns channels.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int64_t rows, int64_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), fill) {}

  int64_t rows() const { return rows_; }
  int64_t cols() const { return cols_; }
  int64_t size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int64_t r, int64_t c) { return data_[r * cols_ + c]; }
  double operator()(int64_t r, int64_t c) const { return data_[r * cols_ + c]; }

  double* row(int64_t r) { return data_.data() + r * cols_; }
  const double* row(int64_t r) const { return data_.data() + r * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int64_t rows_ = 0;
  int64_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace oslo
