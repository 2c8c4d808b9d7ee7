#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace otmatch {

// Dense row-major matrix of doubles. The only value type of the
// computation layer; row vectors are 1 x d matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rs);

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row_ptr(std::size_t r) { return data.data() + r * cols; }
  const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;
  std::string shape_str() const;  // "3x4"
};

bool operator==(const Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);
// Transposed-operand products used by reverse-mode updates; they avoid
// materializing the transposes.
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a . b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T . b
Matrix transpose(const Matrix& m);

// out += in (shapes must match).
void accumulate(Matrix& out, const Matrix& in);

}  // namespace otmatch
