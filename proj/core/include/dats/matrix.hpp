#pragma once

#include <cstddef>
#include <vector>

namespace dats {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool empty() const { return rows == 0 || cols == 0; }
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix transpose(const Matrix& a);

// y += alpha * x (shapes must match).
void axpy(double alpha, const Matrix& x, Matrix& y);
void scale(Matrix& m, double s);
Matrix vstack(const Matrix& top, const Matrix& bottom);
Matrix take_rows(const Matrix& m, std::size_t begin, std::size_t count);

bool all_finite(const Matrix& m);
bool all_finite(const std::vector<double>& v);

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x);
std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& x);  // a^T x
std::vector<double> column_sums(const Matrix& m);
std::vector<double> row_mean(const Matrix& m);

double dot(const std::vector<double>& a, const std::vector<double>& b);
double squared_distance(const double* a, const double* b, std::size_t n);

// Solve a x = b for square a by partial-pivot elimination.
// Throws DegenerateError when a is singular to working precision.
std::vector<double> solve_linear(Matrix a, std::vector<double> b);

// Cholesky test for symmetric positive definiteness with a relative pivot
// tolerance. Returns false instead of throwing.
bool is_positive_definite(const Matrix& a, double rel_tol = 1e-12);

// Eigenvalues of a symmetric matrix by cyclic Jacobi, ascending order.
// Intended for small matrices.
std::vector<double> symmetric_eigenvalues(Matrix a);

}  // namespace dats
