#include "dats/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dats/errors.hpp"

namespace dats {

SimplexVector::SimplexVector(std::vector<double> v) : values(std::move(v)) { validate(); }

SimplexVector SimplexVector::uniform(std::size_t n) {
  if (n == 0) throw UsageError("SimplexVector::uniform: empty");
  SimplexVector s;
  s.values.assign(n, 1.0 / static_cast<double>(n));
  return s;
}

SimplexVector SimplexVector::point_mass(std::size_t n, std::size_t at) {
  if (at >= n) throw UsageError("SimplexVector::point_mass: index out of range");
  SimplexVector s;
  s.values.assign(n, 0.0);
  s.values[at] = 1.0;
  return s;
}

SimplexVector SimplexVector::unchecked(std::vector<double> v) {
  SimplexVector s;
  s.values = std::move(v);
  return s;
}

void SimplexVector::validate(double tol) const {
  if (values.empty()) throw UsageError("SimplexVector: empty");
  double sum = 0.0;
  for (double x : values) {
    if (!(x >= 0.0)) throw UsageError("SimplexVector: negative or NaN entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > tol)
    throw UsageError("SimplexVector: entries sum to " + std::to_string(sum));
}

SimplexVector softmax_simplex(const std::vector<double>& logits) {
  if (logits.empty()) throw UsageError("softmax_simplex: empty logits");
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return SimplexVector::unchecked(std::move(out));
}

std::vector<double> softmax_chain(const SimplexVector& probs,
                                  const std::vector<double>& grad_probs) {
  if (probs.size() != grad_probs.size()) throw UsageError("softmax_chain: length mismatch");
  double inner = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) inner += probs[i] * grad_probs[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad_probs[i] - inner);
  return out;
}

std::vector<double> project_to_simplex(std::vector<double> v) {
  if (v.empty()) throw UsageError("project_to_simplex: empty vector");
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) {
      tau = candidate;
      support = j + 1;
    }
  }
  (void)support;
  for (double& x : v) x = std::max(x - tau, 0.0);
  return v;
}

SimplexVector simplex_least_squares(const Matrix& quad, const std::vector<double>& lin) {
  const std::size_t n = lin.size();
  if (quad.rows != n || quad.cols != n)
    throw UsageError("simplex_least_squares: dimension mismatch");
  if (n == 0) throw UsageError("simplex_least_squares: empty problem");
  if (n == 1) return SimplexVector::uniform(1);

  constexpr double kTol = 1e-10;
  std::vector<bool> at_zero(n, false);
  std::vector<double> x(n, 0.0);
  double nu = 0.0;

  const int max_passes = static_cast<int>(3 * n + 16);
  for (int pass = 0; pass < max_passes; ++pass) {
    std::vector<std::size_t> free_idx;
    for (std::size_t i = 0; i < n; ++i)
      if (!at_zero[i]) free_idx.push_back(i);
    const std::size_t m = free_idx.size();

    // Equality-constrained subproblem on the free coordinates.
    Matrix kkt(m + 1, m + 1);
    std::vector<double> rhs(m + 1, 0.0);
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) kkt(a, b) = quad(free_idx[a], free_idx[b]);
      kkt(a, m) = 1.0;
      kkt(m, a) = 1.0;
      rhs[a] = lin[free_idx[a]];
    }
    rhs[m] = 1.0;
    // The simplex constraint regularizes rank-one deficiencies of `quad`
    // (a single zero column is fine); truly coincident columns still leave
    // the constrained system singular and surface here.
    std::vector<double> sol;
    try {
      sol = solve_linear(std::move(kkt), std::move(rhs));
    } catch (const DegenerateError&) {
      throw DegenerateError(
          "simplex_least_squares: constrained normal equations are singular; "
          "the mean columns are degenerate");
    }

    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t a = 0; a < m; ++a) x[free_idx[a]] = sol[a];
    nu = sol[m];

    // Most negative free coordinate gets clamped first.
    std::size_t worst = n;
    double worst_val = -kTol;
    for (std::size_t a = 0; a < m; ++a) {
      if (sol[a] < worst_val) {
        worst_val = sol[a];
        worst = free_idx[a];
      }
    }
    if (worst != n) {
      at_zero[worst] = true;
      continue;
    }

    for (double& xi : x) xi = std::max(xi, 0.0);

    // Check multipliers of the clamped coordinates; release the most
    // violated one if the solution is not yet optimal.
    const std::vector<double> qx = matvec(quad, x);
    std::size_t release = n;
    double release_val = -kTol;
    for (std::size_t i = 0; i < n; ++i) {
      if (!at_zero[i]) continue;
      const double mult = qx[i] - lin[i] + nu;
      if (mult < release_val) {
        release_val = mult;
        release = i;
      }
    }
    if (release != n) {
      at_zero[release] = false;
      continue;
    }

    const double sum = std::accumulate(x.begin(), x.end(), 0.0);
    for (double& xi : x) xi /= sum;
    return SimplexVector::unchecked(std::move(x));
  }
  throw NumericError("simplex_least_squares: active-set iteration did not settle");
}

std::vector<double> minimize_over_simplex(
    const std::function<ScalarGrad(const std::vector<double>&)>& objective, std::size_t n,
    std::size_t iterations, double learning_rate) {
  if (n == 0) throw UsageError("minimize_over_simplex: empty problem");
  std::vector<double> logits(n, 0.0);
  for (std::size_t it = 0; it < iterations; ++it) {
    const ScalarGrad eval = objective(logits);
    if (eval.grad_logits.size() != n)
      throw UsageError("minimize_over_simplex: gradient length mismatch");
    for (std::size_t i = 0; i < n; ++i) logits[i] -= learning_rate * eval.grad_logits[i];
    if (!all_finite(logits))
      throw NumericError("minimize_over_simplex: logits diverged at iteration " +
                         std::to_string(it));
  }
  return logits;
}

}  // namespace dats
