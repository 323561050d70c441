#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "dats/matrix.hpp"

namespace dats {

// Nonnegative vector summing to one.
struct SimplexVector {
  std::vector<double> values;

  SimplexVector() = default;
  explicit SimplexVector(std::vector<double> v);  // validates

  static SimplexVector uniform(std::size_t n);
  static SimplexVector point_mass(std::size_t n, std::size_t at);
  static SimplexVector unchecked(std::vector<double> v);

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }

  void validate(double tol = 1e-9) const;  // throws UsageError
};

// Numerically stable softmax; the result is on the simplex for any finite
// logits, including large magnitudes.
SimplexVector softmax_simplex(const std::vector<double>& logits);

// Chain rule through the softmax link: given d(loss)/d(probs), returns
// d(loss)/d(logits).
std::vector<double> softmax_chain(const SimplexVector& probs,
                                  const std::vector<double>& grad_probs);

// Euclidean projection onto the probability simplex.
std::vector<double> project_to_simplex(std::vector<double> v);

// Minimizes 0.5 x^T quad x - lin^T x over the simplex by an active-set
// method on the KKT system. `quad` must be symmetric positive definite;
// a singular system raises DegenerateError.
SimplexVector simplex_least_squares(const Matrix& quad, const std::vector<double>& lin);

struct ScalarGrad {
  double value = 0.0;
  std::vector<double> grad_logits;
};

// Plain gradient descent on logits for f(softmax(logits)). Returns the final
// logits. Used by the estimation CLI path and as the gradient-route solver in
// tests; training performs single steps itself.
std::vector<double> minimize_over_simplex(
    const std::function<ScalarGrad(const std::vector<double>&)>& objective, std::size_t n,
    std::size_t iterations, double learning_rate);

}  // namespace dats
