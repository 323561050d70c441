#include "dats/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "dats/errors.hpp"

namespace dats {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw UsageError(what);
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, "matmul: inner dimensions differ");
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) oi[j] += aik * bk[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require(a.rows == b.rows, "matmul_tn: row counts differ");
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* oi = out.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) oi[j] += aki * bk[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require(a.cols == b.cols, "matmul_nt: column counts differ");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* oi = out.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += ai[k] * bj[k];
      oi[j] = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  require(x.same_shape(y), "axpy: shapes differ");
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

void scale(Matrix& m, double s) {
  for (double& v : m.data) v *= s;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.rows == 0) return bottom;
  if (bottom.rows == 0) return top;
  require(top.cols == bottom.cols, "vstack: column counts differ");
  Matrix out(top.rows + bottom.rows, top.cols);
  std::copy(top.data.begin(), top.data.end(), out.data.begin());
  std::copy(bottom.data.begin(), bottom.data.end(), out.data.begin() + top.data.size());
  return out;
}

Matrix take_rows(const Matrix& m, std::size_t begin, std::size_t count) {
  require(begin + count <= m.rows, "take_rows: range out of bounds");
  Matrix out(count, m.cols);
  std::copy(m.row(begin), m.row(begin) + count * m.cols, out.data.begin());
  return out;
}

bool all_finite(const Matrix& m) { return all_finite(m.data); }

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  require(a.cols == x.size(), "matvec: dimension mismatch");
  std::vector<double> out(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) acc += ai[j] * x[j];
    out[i] = acc;
  }
  return out;
}

std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& x) {
  require(a.rows == x.size(), "matvec_t: dimension mismatch");
  std::vector<double> out(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < a.cols; ++j) out[j] += xi * ai[j];
  }
  return out;
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += mi[j];
  }
  return out;
}

std::vector<double> row_mean(const Matrix& m) {
  require(m.rows > 0, "row_mean: empty matrix");
  std::vector<double> out = column_sums(m);
  for (double& v : out) v /= static_cast<double>(m.rows);
  return out;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "dot: lengths differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
  require(a.rows == a.cols, "solve_linear: matrix not square");
  require(a.rows == b.size(), "solve_linear: rhs length mismatch");
  const std::size_t n = a.rows;

  double max_entry = 0.0;
  for (double v : a.data) max_entry = std::max(max_entry, std::abs(v));
  const double tol = std::max(max_entry, 1.0) * 1e-13;

  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (std::abs(a(pivot, col)) <= tol)
      throw DegenerateError("solve_linear: matrix is singular to working precision");
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(pivot, j), a(col, j));
      std::swap(b[pivot], b[col]);
    }
    const double inv = 1.0 / a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) * inv;
      if (f == 0.0) continue;
      a(r, col) = 0.0;
      for (std::size_t j = col + 1; j < n; ++j) a(r, j) -= f * a(col, j);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = n; i-- > 0;) {
    double acc = b[i];
    for (std::size_t j = i + 1; j < n; ++j) acc -= a(i, j) * x[j];
    x[i] = acc / a(i, i);
  }
  return x;
}

bool is_positive_definite(const Matrix& a, double rel_tol) {
  if (a.rows != a.cols || a.rows == 0) return false;
  const std::size_t n = a.rows;
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double floor = std::max(max_diag, 1.0) * rel_tol;

  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= floor) return false;
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return true;
}

std::vector<double> symmetric_eigenvalues(Matrix a) {
  require(a.rows == a.cols, "symmetric_eigenvalues: matrix not square");
  const std::size_t n = a.rows;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace dats
