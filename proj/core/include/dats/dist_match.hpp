#pragma once

#include <cstddef>
#include <vector>

#include "dats/matrix.hpp"
#include "dats/simplex.hpp"

namespace dats {

// How the RBF bandwidth is chosen when a grid is built.
struct BandwidthPolicy {
  enum class Kind { kMedianPairwise, kFixed };
  Kind kind = Kind::kMedianPairwise;
  double fixed_value = 1.0;
  // Median heuristic works on an evenly strided subsample of at most this
  // many rows, which keeps it deterministic and cheap on large inputs.
  std::size_t sample_cap = 256;
};

// Anchor set for the kernel features of one source domain: one point per
// class-conditional mean plus the overall domain mean, so num_classes + 1
// rows in total.
struct KernelGrid {
  Matrix points;
  double bandwidth = 1.0;
  bool degenerate = false;  // grid points (numerically) coincide

  std::size_t size() const { return points.rows; }
  std::size_t dim() const { return points.cols; }
};

// Second-order kernel statistics for one source domain against the target:
//   second_moment  = (1/n_target) sum_j phi(h_j) phi(h_j)^T   over target rows,
//   class_profiles = per-class means of phi over the source rows,
// plus the ridge that keeps the linear solve well posed.
struct MatchStats {
  Matrix second_moment;   // (L+1) x (L+1), symmetric PSD by construction
  Matrix class_profiles;  // (L+1) x L
  double ridge = 0.0;
};

// Builds the anchor grid from one domain's features and labels.
// Every class must be present; otherwise DegenerateError names the class.
KernelGrid build_grid(const Matrix& features, const std::vector<int>& labels,
                      std::size_t num_classes, const BandwidthPolicy& policy);

// phi_j(h) = exp(-||h - grid_j||^2 / (2 bandwidth^2)).
std::vector<double> kernel_features(const double* h, std::size_t dim, const KernelGrid& grid);
std::vector<double> kernel_features(const std::vector<double>& h, const KernelGrid& grid);

// Streaming accumulator so minibatch and whole-set estimation share one code
// path; chunked accumulation matches the one-shot computation exactly.
class MatchStatsAccumulator {
 public:
  MatchStatsAccumulator(const KernelGrid& grid, std::size_t num_classes);

  void add_target(const double* h);
  void add_source(const double* h, int label);

  // ridge_override > 0 uses that value; otherwise the ridge is
  // ridge_scale * trace(second_moment) / (L+1).
  MatchStats finalize(double ridge_scale, double ridge_override = -1.0) const;

 private:
  const KernelGrid& grid_;
  std::size_t num_classes_;
  Matrix outer_sum_;
  Matrix class_sum_;
  std::vector<std::size_t> class_counts_;
  std::size_t target_count_ = 0;
};

inline constexpr double kDefaultRidgeScale = 1e-3;

// One-shot estimation over full sample sets.
MatchStats estimate_match_stats(const Matrix& target_features, const Matrix& source_features,
                                const std::vector<int>& source_labels, const KernelGrid& grid,
                                double ridge_override = -1.0,
                                double ridge_scale = kDefaultRidgeScale);

// Density-ratio coefficients: solves
//   (second_moment + ridge I) coeffs = class_profiles * props
// and verifies the residual.
std::vector<double> optimal_ratio_coeffs(const MatchStats& stats, const SimplexVector& props);

// Divergence surrogate after substituting the optimal coefficients:
//   J(p) = -1/2 u^T C A C u + u^T C u,  u = class_profiles * p,
//   C = (A + ridge I)^{-1},  A = second_moment.
// Nonnegative, quadratic in p, and minimized on the simplex near the
// proportions that make the reweighted source match the target.
double f_divergence_value(const MatchStats& stats, const SimplexVector& props);

// Same value with p = softmax(logits) and the gradient through the link.
ScalarGrad f_divergence_objective(const MatchStats& stats,
                                  const std::vector<double>& proportion_logits);

// Weighted sum of per-source objectives.
ScalarGrad combined_match_loss(const std::vector<MatchStats>& per_source,
                               const SimplexVector& domain_weights,
                               const std::vector<double>& proportion_logits);

// Median of pairwise Euclidean distances over a strided subsample.
double median_pairwise_distance(const Matrix& features, std::size_t sample_cap);

}  // namespace dats
