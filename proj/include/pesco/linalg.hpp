#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "pesco/errors.hpp"

namespace pesco {

// Dense row-major matrix of doubles. Small and deliberately plain; every
// hot loop in the library indexes rows directly.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double value) { data_.assign(data_.size(), value); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Unit-L2-norm embedding produced by an encoder.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw DimensionMismatchError("embedding dimensions differ: " + std::to_string(a.dim()) +
                                 " vs " + std::to_string(b.dim()));
  double sum = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) sum += a.values[i] * b.values[i];
  return sum;
}

inline double l2_norm(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x * x;
  return std::sqrt(sum);
}

// Cosine similarity. Encoder outputs are unit vectors, so this is a dot
// product; kept as its own name to match the scoring vocabulary.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return dot(a, b); }

}  // namespace pesco
