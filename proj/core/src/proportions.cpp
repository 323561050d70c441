#include "dats/proportions.hpp"

#include <cmath>
#include <string>

#include "dats/errors.hpp"

namespace dats {

bool ClassMeans::complete() const {
  for (std::size_t c : counts)
    if (c == 0) return false;
  return !counts.empty();
}

SimplexVector source_proportions(const std::vector<int>& labels, std::size_t num_classes) {
  if (labels.empty()) throw UsageError("source_proportions: empty label vector");
  if (num_classes == 0) throw UsageError("source_proportions: zero classes");
  std::vector<double> props(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
      throw UsageError("source_proportions: label out of range at row " + std::to_string(i));
    props[labels[i]] += 1.0;
  }
  for (double& p : props) p /= static_cast<double>(labels.size());
  return SimplexVector::unchecked(std::move(props));
}

ClassMeans class_conditional_means(const Matrix& features, const std::vector<int>& labels,
                                   std::size_t num_classes) {
  if (features.rows != labels.size())
    throw UsageError("class_conditional_means: feature/label row mismatch");
  if (num_classes == 0) throw UsageError("class_conditional_means: zero classes");

  ClassMeans out;
  out.means = Matrix(features.cols, num_classes);
  out.counts.assign(num_classes, 0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes)
      throw UsageError("class_conditional_means: label out of range at row " +
                       std::to_string(i));
    out.counts[l] += 1;
    const double* fi = features.row(i);
    for (std::size_t j = 0; j < features.cols; ++j) out.means(j, l) += fi[j];
  }
  for (std::size_t l = 0; l < num_classes; ++l) {
    if (out.counts[l] == 0) continue;
    const double inv = 1.0 / static_cast<double>(out.counts[l]);
    for (std::size_t j = 0; j < features.cols; ++j) out.means(j, l) *= inv;
  }
  return out;
}

ScalarGrad mean_matching_loss(const std::vector<ClassMeans>& source_means,
                              const SimplexVector& domain_weights,
                              const std::vector<double>& proportion_logits,
                              const std::vector<double>& target_mean) {
  if (source_means.empty()) throw UsageError("mean_matching_loss: no source domains");
  if (domain_weights.size() != source_means.size())
    throw UsageError("mean_matching_loss: one weight per source required");
  const std::size_t num_classes = proportion_logits.size();
  const std::size_t dim = target_mean.size();
  for (const ClassMeans& cm : source_means) {
    if (cm.num_classes() != num_classes || cm.feature_dim() != dim)
      throw UsageError("mean_matching_loss: class-mean shape mismatch");
  }

  const SimplexVector props = softmax_simplex(proportion_logits);
  ScalarGrad out;
  std::vector<double> grad_props(num_classes, 0.0);
  for (std::size_t s = 0; s < source_means.size(); ++s) {
    const double w = domain_weights[s];
    if (w == 0.0) continue;
    const Matrix& m = source_means[s].means;
    std::vector<double> residual = matvec(m, props.values);
    for (std::size_t j = 0; j < dim; ++j) residual[j] -= target_mean[j];
    out.value += w * dot(residual, residual);
    const std::vector<double> pull = matvec_t(m, residual);
    for (std::size_t l = 0; l < num_classes; ++l) grad_props[l] += 2.0 * w * pull[l];
  }
  out.grad_logits = softmax_chain(props, grad_props);
  return out;
}

SimplexVector solve_proportions_closed_form(const ClassMeans& means,
                                            const std::vector<double>& target_mean) {
  return solve_proportions_closed_form(std::vector<ClassMeans>{means},
                                       SimplexVector::uniform(1), target_mean);
}

SimplexVector solve_proportions_closed_form(const std::vector<ClassMeans>& source_means,
                                            const SimplexVector& domain_weights,
                                            const std::vector<double>& target_mean) {
  if (source_means.empty()) throw UsageError("solve_proportions_closed_form: no sources");
  if (domain_weights.size() != source_means.size())
    throw UsageError("solve_proportions_closed_form: one weight per source required");
  const std::size_t num_classes = source_means.front().num_classes();
  const std::size_t dim = target_mean.size();

  Matrix quad(num_classes, num_classes);
  std::vector<double> lin(num_classes, 0.0);
  for (std::size_t s = 0; s < source_means.size(); ++s) {
    const ClassMeans& cm = source_means[s];
    if (cm.num_classes() != num_classes || cm.feature_dim() != dim)
      throw UsageError("solve_proportions_closed_form: class-mean shape mismatch");
    if (!cm.complete())
      throw UsageError("solve_proportions_closed_form: source " + std::to_string(s) +
                       " is missing a class");
    const double w = domain_weights[s];
    if (w == 0.0) continue;
    const Matrix gram = matmul_tn(cm.means, cm.means);
    axpy(w, gram, quad);
    const std::vector<double> proj = matvec_t(cm.means, target_mean);
    for (std::size_t l = 0; l < num_classes; ++l) lin[l] += w * proj[l];
  }
  return simplex_least_squares(quad, lin);
}

ClassRatios class_ratios(const SimplexVector& target_props, const SimplexVector& source_props,
                         double floor) {
  if (target_props.size() != source_props.size())
    throw UsageError("class_ratios: proportion length mismatch");
  if (!(floor > 0.0)) throw UsageError("class_ratios: floor must be positive");
  ClassRatios out;
  out.ratio.resize(target_props.size());
  for (std::size_t l = 0; l < target_props.size(); ++l) {
    out.ratio[l] = target_props[l] / std::max(source_props[l], floor);
    out.l1_norm += std::abs(out.ratio[l]);
  }
  return out;
}

}  // namespace dats
