#pragma once

#include <optional>
#include <vector>

#include "dats/matrix.hpp"
#include "dats/simplex.hpp"

namespace dats {

// Source-relevance weights with exponential smoothing across iterations.
struct DomainWeightState {
  SimplexVector weights;
  double smoothing = 0.9;  // fraction of the old weights kept, in [0, 1)
};

// Column means of each domain's adapter hidden activations. An empty batch
// yields nullopt so the caller can keep the previous weight entry.
std::vector<std::optional<std::vector<double>>> adapter_hidden_means(
    const std::vector<Matrix>& hidden_per_domain);

// softmax over negated squared distances to the target mean; closer source
// domains receive larger weight.
SimplexVector compute_domain_weights(const std::vector<std::vector<double>>& source_means,
                                     const std::vector<double>& target_mean);

// state.weights = smoothing * old + (1 - smoothing) * fresh.
void smooth_domain_weights(DomainWeightState& state, const SimplexVector& fresh);

}  // namespace dats
