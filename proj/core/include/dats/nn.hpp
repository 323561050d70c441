#pragma once

#include <cstddef>
#include <vector>

#include "dats/matrix.hpp"
#include "dats/rng.hpp"

namespace dats {

enum class Activation { kIdentity, kRelu, kSoftmax };

// One dense layer. Weights are stored out x in.
struct DenseLayer {
  Matrix weight;
  std::vector<double> bias;
  Activation act = Activation::kIdentity;
};

// A stack of dense layers applied in sequence. A softmax activation is only
// allowed on the last layer and marks a probability head.
using MlpParams = std::vector<DenseLayer>;

// Per-layer intermediates from one forward pass over a minibatch.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // pre-activations
  std::vector<Matrix> post;  // activations
};

// Glorot-uniform weights, zero biases. `hidden` lists the widths of the
// intermediate layers; every hidden layer is ReLU.
MlpParams make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                   std::size_t out_dim, Activation output_act, Rng& rng);

std::size_t mlp_input_dim(const MlpParams& params);
std::size_t mlp_output_dim(const MlpParams& params);
std::size_t param_count(const MlpParams& params);

// Applies each layer in sequence. Fills `cache` when non-null.
// Throws ConfigError if layer dimensions do not chain or the input is not
// finite.
Matrix mlp_forward(const Matrix& x, const MlpParams& params, ForwardCache* cache = nullptr);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;  // wrt the logits passed in
};

// loss = sum_i weights[i] * (-log softmax(logits_i)[labels[i]]), with the
// exact analytic gradient wrt logits.
LossGrad weighted_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                const std::vector<double>& weights);

struct MlpGradients {
  MlpParams layers;  // same shapes as the parameters, holding gradients
  Matrix input;      // gradient wrt the forward input
};

// Exact backpropagation through the stack that produced `cache`.
//
// grad_output is the gradient wrt the network output, except when the last
// layer is a softmax head: there it is the gradient wrt that layer's
// pre-activation logits, as produced by weighted_cross_entropy (softmax and
// cross entropy are fused).
MlpGradients mlp_backward(const ForwardCache& cache, const MlpParams& params,
                          const Matrix& grad_output);

// Returns -strength * grad. Forward direction is the identity, so only the
// backward hook exists as an op.
Matrix gradient_reversal(const Matrix& grad, double strength);

enum class OptKind { kSgd, kMomentum };

struct OptimizerConfig {
  double learning_rate = 0.05;
  OptKind kind = OptKind::kSgd;
  double momentum = 0.0;  // in [0, 1)
};

struct OptimizerState {
  std::vector<DenseLayer> velocity;  // sized lazily to match the params
};

// sgd:      p -= lr * g
// momentum: v = mu * v + g; p -= lr * v
void optimizer_step(MlpParams& params, const MlpParams& grads, const OptimizerConfig& config,
                    OptimizerState& state);

Matrix softmax_rows(const Matrix& logits);

void accumulate(MlpParams& into, const MlpParams& grads);

}  // namespace dats
