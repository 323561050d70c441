#include "dats/domain_weights.hpp"

#include "dats/errors.hpp"

namespace dats {

std::vector<std::optional<std::vector<double>>> adapter_hidden_means(
    const std::vector<Matrix>& hidden_per_domain) {
  std::vector<std::optional<std::vector<double>>> out;
  out.reserve(hidden_per_domain.size());
  for (const Matrix& m : hidden_per_domain) {
    if (m.rows == 0) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(row_mean(m));
    }
  }
  return out;
}

SimplexVector compute_domain_weights(const std::vector<std::vector<double>>& source_means,
                                     const std::vector<double>& target_mean) {
  if (source_means.empty()) throw UsageError("compute_domain_weights: no source domains");
  std::vector<double> neg_sq_dist(source_means.size());
  for (std::size_t s = 0; s < source_means.size(); ++s) {
    if (source_means[s].size() != target_mean.size())
      throw UsageError("compute_domain_weights: mean dimension mismatch");
    neg_sq_dist[s] =
        -squared_distance(source_means[s].data(), target_mean.data(), target_mean.size());
  }
  return softmax_simplex(neg_sq_dist);
}

void smooth_domain_weights(DomainWeightState& state, const SimplexVector& fresh) {
  if (state.weights.size() != fresh.size())
    throw UsageError("smooth_domain_weights: weight length mismatch");
  if (!(state.smoothing >= 0.0 && state.smoothing < 1.0))
    throw UsageError("smooth_domain_weights: smoothing must lie in [0, 1)");
  std::vector<double> next(fresh.size());
  for (std::size_t s = 0; s < fresh.size(); ++s)
    next[s] = state.smoothing * state.weights[s] + (1.0 - state.smoothing) * fresh[s];
  state.weights = SimplexVector::unchecked(std::move(next));
}

}  // namespace dats
