#include "dats/dist_match.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dats/errors.hpp"
#include "dats/proportions.hpp"

namespace dats {

KernelGrid build_grid(const Matrix& features, const std::vector<int>& labels,
                      std::size_t num_classes, const BandwidthPolicy& policy) {
  if (features.rows == 0) throw UsageError("build_grid: empty feature set");
  const ClassMeans cm = class_conditional_means(features, labels, num_classes);
  for (std::size_t l = 0; l < num_classes; ++l) {
    if (cm.counts[l] == 0)
      throw DegenerateError("build_grid: class " + std::to_string(l) +
                            " has no samples in this domain");
  }

  KernelGrid grid;
  grid.points = Matrix(num_classes + 1, features.cols);
  for (std::size_t l = 0; l < num_classes; ++l)
    for (std::size_t j = 0; j < features.cols; ++j) grid.points(l, j) = cm.means(j, l);
  const std::vector<double> domain_mean = row_mean(features);
  for (std::size_t j = 0; j < features.cols; ++j)
    grid.points(num_classes, j) = domain_mean[j];

  switch (policy.kind) {
    case BandwidthPolicy::Kind::kFixed:
      if (!(policy.fixed_value > 0.0))
        throw ConfigError("build_grid: fixed bandwidth must be positive");
      grid.bandwidth = policy.fixed_value;
      break;
    case BandwidthPolicy::Kind::kMedianPairwise: {
      const double med = median_pairwise_distance(features, policy.sample_cap);
      grid.bandwidth = med > 0.0 ? med : 1.0;
      break;
    }
  }

  double max_spread = 0.0;
  for (std::size_t a = 0; a < grid.size(); ++a)
    for (std::size_t b = a + 1; b < grid.size(); ++b)
      max_spread = std::max(
          max_spread, squared_distance(grid.points.row(a), grid.points.row(b), grid.dim()));
  grid.degenerate = max_spread < 1e-24;
  return grid;
}

std::vector<double> kernel_features(const double* h, std::size_t dim, const KernelGrid& grid) {
  if (dim != grid.dim()) throw UsageError("kernel_features: dimension mismatch");
  if (!(grid.bandwidth > 0.0)) throw UsageError("kernel_features: bandwidth must be positive");
  const double inv = 1.0 / (2.0 * grid.bandwidth * grid.bandwidth);
  std::vector<double> phi(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j)
    phi[j] = std::exp(-squared_distance(h, grid.points.row(j), dim) * inv);
  return phi;
}

std::vector<double> kernel_features(const std::vector<double>& h, const KernelGrid& grid) {
  return kernel_features(h.data(), h.size(), grid);
}

MatchStatsAccumulator::MatchStatsAccumulator(const KernelGrid& grid, std::size_t num_classes)
    : grid_(grid),
      num_classes_(num_classes),
      outer_sum_(grid.size(), grid.size()),
      class_sum_(grid.size(), num_classes),
      class_counts_(num_classes, 0) {}

void MatchStatsAccumulator::add_target(const double* h) {
  const std::vector<double> phi = kernel_features(h, grid_.dim(), grid_);
  for (std::size_t a = 0; a < phi.size(); ++a) {
    const double pa = phi[a];
    double* row = outer_sum_.row(a);
    for (std::size_t b = 0; b < phi.size(); ++b) row[b] += pa * phi[b];
  }
  ++target_count_;
}

void MatchStatsAccumulator::add_source(const double* h, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= num_classes_)
    throw UsageError("MatchStatsAccumulator: label out of range");
  const std::vector<double> phi = kernel_features(h, grid_.dim(), grid_);
  for (std::size_t a = 0; a < phi.size(); ++a) class_sum_(a, label) += phi[a];
  ++class_counts_[label];
}

MatchStats MatchStatsAccumulator::finalize(double ridge_scale, double ridge_override) const {
  if (target_count_ == 0) throw UsageError("match stats: no target samples");
  for (std::size_t l = 0; l < num_classes_; ++l) {
    if (class_counts_[l] == 0)
      throw DegenerateError("match stats: class " + std::to_string(l) +
                            " has no source samples");
  }

  MatchStats stats;
  stats.second_moment = outer_sum_;
  scale(stats.second_moment, 1.0 / static_cast<double>(target_count_));
  stats.class_profiles = class_sum_;
  for (std::size_t l = 0; l < num_classes_; ++l) {
    const double inv = 1.0 / static_cast<double>(class_counts_[l]);
    for (std::size_t a = 0; a < grid_.size(); ++a) stats.class_profiles(a, l) *= inv;
  }

  if (ridge_override > 0.0) {
    stats.ridge = ridge_override;
  } else {
    double trace = 0.0;
    for (std::size_t a = 0; a < grid_.size(); ++a) trace += stats.second_moment(a, a);
    stats.ridge = std::max(ridge_scale * trace / static_cast<double>(grid_.size()), 1e-12);
  }
  return stats;
}

MatchStats estimate_match_stats(const Matrix& target_features, const Matrix& source_features,
                                const std::vector<int>& source_labels, const KernelGrid& grid,
                                double ridge_override, double ridge_scale) {
  if (source_features.rows != source_labels.size())
    throw UsageError("estimate_match_stats: source feature/label mismatch");
  if (grid.size() < 2) throw UsageError("estimate_match_stats: grid too small");
  const std::size_t num_classes = grid.size() - 1;  // grid = class means + domain mean
  MatchStatsAccumulator acc(grid, num_classes);
  for (std::size_t i = 0; i < target_features.rows; ++i) acc.add_target(target_features.row(i));
  for (std::size_t i = 0; i < source_features.rows; ++i)
    acc.add_source(source_features.row(i), source_labels[i]);
  return acc.finalize(ridge_scale, ridge_override);
}

namespace {

Matrix ridged(const MatchStats& stats) {
  Matrix a = stats.second_moment;
  for (std::size_t i = 0; i < a.rows; ++i) a(i, i) += stats.ridge;
  return a;
}

// Shared evaluation: value and gradient wrt the (unconstrained) proportions.
//   u = class_profiles p, v = C u, w = C v with C = (A + ridge I)^{-1}
//   J  = -1/2 v^T A v + u^T v
//   dJ/dp = class_profiles^T (v + ridge w)
void divergence_core(const MatchStats& stats, const std::vector<double>& props, double* value,
                     std::vector<double>* grad_props) {
  if (props.size() != stats.class_profiles.cols)
    throw UsageError("f_divergence: proportion length mismatch");
  const std::vector<double> u = matvec(stats.class_profiles, props);
  const Matrix reg = ridged(stats);
  const std::vector<double> v = solve_linear(reg, u);
  if (value) {
    const std::vector<double> av = matvec(stats.second_moment, v);
    *value = -0.5 * dot(v, av) + dot(u, v);
  }
  if (grad_props) {
    const std::vector<double> w = solve_linear(reg, v);
    std::vector<double> lifted(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) lifted[i] = v[i] + stats.ridge * w[i];
    *grad_props = matvec_t(stats.class_profiles, lifted);
  }
}

}  // namespace

std::vector<double> optimal_ratio_coeffs(const MatchStats& stats, const SimplexVector& props) {
  const std::vector<double> rhs = matvec(stats.class_profiles, props.values);
  const Matrix reg = ridged(stats);
  std::vector<double> coeffs = solve_linear(reg, rhs);

  const std::vector<double> back = matvec(reg, coeffs);
  double resid = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i)
    resid = std::max(resid, std::abs(back[i] - rhs[i]));
  if (resid > 1e-8)
    throw NumericError("optimal_ratio_coeffs: solve residual " + std::to_string(resid));
  return coeffs;
}

double f_divergence_value(const MatchStats& stats, const SimplexVector& props) {
  double value = 0.0;
  divergence_core(stats, props.values, &value, nullptr);
  return value;
}

ScalarGrad f_divergence_objective(const MatchStats& stats,
                                  const std::vector<double>& proportion_logits) {
  const SimplexVector props = softmax_simplex(proportion_logits);
  ScalarGrad out;
  std::vector<double> grad_props;
  divergence_core(stats, props.values, &out.value, &grad_props);
  out.grad_logits = softmax_chain(props, grad_props);
  return out;
}

ScalarGrad combined_match_loss(const std::vector<MatchStats>& per_source,
                               const SimplexVector& domain_weights,
                               const std::vector<double>& proportion_logits) {
  if (per_source.empty()) throw UsageError("combined_match_loss: no source statistics");
  if (domain_weights.size() != per_source.size())
    throw UsageError("combined_match_loss: one weight per source required");

  const SimplexVector props = softmax_simplex(proportion_logits);
  ScalarGrad out;
  std::vector<double> grad_props(props.size(), 0.0);
  for (std::size_t s = 0; s < per_source.size(); ++s) {
    const double w = domain_weights[s];
    if (w == 0.0) continue;
    double value = 0.0;
    std::vector<double> g;
    divergence_core(per_source[s], props.values, &value, &g);
    out.value += w * value;
    for (std::size_t l = 0; l < g.size(); ++l) grad_props[l] += w * g[l];
  }
  out.grad_logits = softmax_chain(props, grad_props);
  return out;
}

double median_pairwise_distance(const Matrix& features, std::size_t sample_cap) {
  if (features.rows < 2) return 0.0;
  const std::size_t cap = std::max<std::size_t>(sample_cap, 2);
  const std::size_t stride = (features.rows + cap - 1) / cap;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < features.rows; i += stride) rows.push_back(i);

  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      dists.push_back(std::sqrt(
          squared_distance(features.row(rows[a]), features.row(rows[b]), features.cols)));
  if (dists.empty()) return 0.0;
  const std::size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + mid, dists.end());
  return dists[mid];
}

}  // namespace dats
