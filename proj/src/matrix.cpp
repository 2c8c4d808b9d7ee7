#include "otmatch/matrix.hpp"

#include <cmath>

#include "otmatch/errors.hpp"

namespace otmatch {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rs) {
  Matrix m;
  m.rows = rs.size();
  m.cols = rs.begin() == rs.end() ? 0 : rs.begin()->size();
  m.data.reserve(m.rows * m.cols);
  for (const auto& r : rs) {
    if (r.size() != m.cols) throw DimensionError("from_rows: ragged row lengths");
    m.data.insert(m.data.end(), r.begin(), r.end());
  }
  return m;
}

bool Matrix::all_finite() const {
  for (double x : data) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions differ: " + a.shape_str() +
                         " vs " + b.shape_str());
  Matrix c(a.rows, b.cols);
  // i-k-j order keeps the inner loop contiguous on both b and c.
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw DimensionError("matmul_nt: column counts differ: " + a.shape_str() +
                         " vs " + b.shape_str());
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw DimensionError("matmul_tn: row counts differ: " + a.shape_str() +
                         " vs " + b.shape_str());
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t.at(j, i) = m.at(i, j);
  return t;
}

void accumulate(Matrix& out, const Matrix& in) {
  if (!out.same_shape(in))
    throw DimensionError("accumulate: shapes differ: " + out.shape_str() +
                         " vs " + in.shape_str());
  for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] += in.data[i];
}

}  // namespace otmatch
