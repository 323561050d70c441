#pragma once

#include <cstddef>
#include <vector>

#include "dats/matrix.hpp"
#include "dats/simplex.hpp"

namespace dats {

// Per-class feature means of one domain, one column per class. A column is
// defined only when its count is positive; undefined columns hold zeros.
struct ClassMeans {
  Matrix means;  // feature_dim x num_classes
  std::vector<std::size_t> counts;

  std::size_t num_classes() const { return counts.size(); }
  std::size_t feature_dim() const { return means.rows; }
  bool complete() const;
};

// Per-class target/source probability ratios with a clamped denominator.
struct ClassRatios {
  std::vector<double> ratio;
  double l1_norm = 0.0;
};

// Empirical label proportions: count_l / n. Throws UsageError on empty input
// or out-of-range labels.
SimplexVector source_proportions(const std::vector<int>& labels, std::size_t num_classes);

// Column l is the mean of feature rows with label l. Absent classes are
// flagged through a zero count rather than an error.
ClassMeans class_conditional_means(const Matrix& features, const std::vector<int>& labels,
                                   std::size_t num_classes);

// Weighted squared mean-matching residual over source domains,
//   sum_s w_s || means_s * p - target_mean ||^2  with p = softmax(logits),
// and its gradient through the softmax link. Columns with zero count
// contribute nothing, so absent classes receive no gradient.
ScalarGrad mean_matching_loss(const std::vector<ClassMeans>& source_means,
                              const SimplexVector& domain_weights,
                              const std::vector<double>& proportion_logits,
                              const std::vector<double>& target_mean);

// Simplex-constrained least squares || means * p - target_mean ||^2 solved
// exactly (active set). Serves as the oracle for the gradient route.
// Throws DegenerateError when the class-mean Gram matrix is singular.
SimplexVector solve_proportions_closed_form(const ClassMeans& means,
                                            const std::vector<double>& target_mean);

// Multi-domain variant minimizing sum_s w_s || means_s * p - target_mean ||^2.
SimplexVector solve_proportions_closed_form(const std::vector<ClassMeans>& source_means,
                                            const SimplexVector& domain_weights,
                                            const std::vector<double>& target_mean);

// ratio_l = target_l / max(source_l, floor).
ClassRatios class_ratios(const SimplexVector& target_props, const SimplexVector& source_props,
                         double floor = 1e-6);

}  // namespace dats
