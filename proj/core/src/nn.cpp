#include "dats/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dats/errors.hpp"

namespace dats {

namespace {

void apply_activation(Matrix& m, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      for (double& v : m.data) v = v > 0.0 ? v : 0.0;
      return;
    case Activation::kSoftmax: {
      m = softmax_rows(m);
      return;
    }
  }
}

void check_chain(const MlpParams& params) {
  if (params.empty()) throw ConfigError("mlp: empty layer stack");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const DenseLayer& l = params[k];
    if (l.weight.rows == 0 || l.weight.cols == 0)
      throw ConfigError("mlp: layer " + std::to_string(k) + " has empty weight");
    if (l.bias.size() != l.weight.rows)
      throw ConfigError("mlp: layer " + std::to_string(k) + " bias length mismatch");
    if (k > 0 && l.weight.cols != params[k - 1].weight.rows)
      throw ConfigError("mlp: layer " + std::to_string(k) + " does not chain");
    if (l.act == Activation::kSoftmax && k + 1 != params.size())
      throw ConfigError("mlp: softmax allowed on the output layer only");
  }
}

}  // namespace

MlpParams make_mlp(std::size_t in_dim, const std::vector<std::size_t>& hidden,
                   std::size_t out_dim, Activation output_act, Rng& rng) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("make_mlp: zero dimension");
  std::vector<std::size_t> dims;
  dims.push_back(in_dim);
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("make_mlp: zero hidden width");
    dims.push_back(h);
  }
  dims.push_back(out_dim);

  MlpParams params;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
    DenseLayer layer;
    layer.weight = Matrix(dims[k + 1], dims[k]);
    layer.bias.assign(dims[k + 1], 0.0);
    const double bound = std::sqrt(6.0 / static_cast<double>(dims[k] + dims[k + 1]));
    for (double& w : layer.weight.data) w = rng.uniform(-bound, bound);
    layer.act = (k + 2 == dims.size()) ? output_act : Activation::kRelu;
    params.push_back(std::move(layer));
  }
  return params;
}

std::size_t mlp_input_dim(const MlpParams& params) {
  return params.empty() ? 0 : params.front().weight.cols;
}

std::size_t mlp_output_dim(const MlpParams& params) {
  return params.empty() ? 0 : params.back().weight.rows;
}

std::size_t param_count(const MlpParams& params) {
  std::size_t n = 0;
  for (const DenseLayer& l : params) n += l.weight.data.size() + l.bias.size();
  return n;
}

Matrix mlp_forward(const Matrix& x, const MlpParams& params, ForwardCache* cache) {
  check_chain(params);
  if (x.cols != mlp_input_dim(params))
    throw ConfigError("mlp_forward: input has " + std::to_string(x.cols) +
                      " columns, expected " + std::to_string(mlp_input_dim(params)));
  if (!all_finite(x)) throw ConfigError("mlp_forward: non-finite input");

  if (cache) {
    cache->input = x;
    cache->pre.clear();
    cache->post.clear();
  }

  Matrix act = x;
  for (const DenseLayer& layer : params) {
    Matrix z = matmul_nt(act, layer.weight);
    for (std::size_t i = 0; i < z.rows; ++i) {
      double* zi = z.row(i);
      for (std::size_t j = 0; j < z.cols; ++j) zi[j] += layer.bias[j];
    }
    if (cache) cache->pre.push_back(z);
    apply_activation(z, layer.act);
    if (cache) cache->post.push_back(z);
    act = std::move(z);
  }
  return act;
}

LossGrad weighted_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                const std::vector<double>& weights) {
  if (labels.size() != logits.rows || weights.size() != logits.rows)
    throw UsageError("weighted_cross_entropy: row count mismatch");
  const std::size_t k = logits.cols;

  for (std::size_t i = 0; i < logits.rows; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (!std::isfinite(logits(i, j)))
        throw NumericError("weighted_cross_entropy: non-finite logit at (" +
                           std::to_string(i) + "," + std::to_string(j) + ")");
    }
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw UsageError("weighted_cross_entropy: label out of range at row " +
                       std::to_string(i));
    if (!std::isfinite(weights[i]))
      throw NumericError("weighted_cross_entropy: non-finite weight at row " +
                         std::to_string(i));
  }

  LossGrad out;
  out.grad = Matrix(logits.rows, k);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double w = weights[i];
    const double* li = logits.row(i);
    double* gi = out.grad.row(i);
    if (w == 0.0) continue;  // exact zero loss and gradient for zero weight

    double mx = li[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, li[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(li[j] - mx);
    const double lse = mx + std::log(sum);

    out.loss += w * (lse - li[labels[i]]);
    for (std::size_t j = 0; j < k; ++j) gi[j] = w * std::exp(li[j] - lse);
    gi[labels[i]] -= w;
  }
  return out;
}

MlpGradients mlp_backward(const ForwardCache& cache, const MlpParams& params,
                          const Matrix& grad_output) {
  check_chain(params);
  const std::size_t depth = params.size();
  if (cache.pre.size() != depth || cache.post.size() != depth)
    throw UsageError("mlp_backward: cache depth does not match parameters");
  if (cache.input.cols != mlp_input_dim(params))
    throw UsageError("mlp_backward: stale cache (input width mismatch)");
  if (grad_output.rows != cache.input.rows || grad_output.cols != mlp_output_dim(params))
    throw UsageError("mlp_backward: grad_output shape mismatch");
  for (std::size_t k = 0; k < depth; ++k) {
    if (cache.pre[k].rows != cache.input.rows || cache.pre[k].cols != params[k].weight.rows)
      throw UsageError("mlp_backward: stale cache at layer " + std::to_string(k));
  }

  MlpGradients out;
  out.layers.resize(depth);

  Matrix delta = grad_output;
  for (std::size_t k = depth; k-- > 0;) {
    const DenseLayer& layer = params[k];
    switch (layer.act) {
      case Activation::kIdentity:
        break;
      case Activation::kSoftmax:
        // Fused with the loss: delta already holds d(loss)/d(pre-activation).
        break;
      case Activation::kRelu: {
        const Matrix& pre = cache.pre[k];
        for (std::size_t i = 0; i < delta.data.size(); ++i)
          if (pre.data[i] <= 0.0) delta.data[i] = 0.0;
        break;
      }
    }
    const Matrix& below = (k == 0) ? cache.input : cache.post[k - 1];
    out.layers[k].weight = matmul_tn(delta, below);
    out.layers[k].bias = column_sums(delta);
    out.layers[k].act = layer.act;
    if (k == 0) {
      out.input = matmul(delta, layer.weight);
    } else {
      delta = matmul(delta, layer.weight);
    }
  }
  return out;
}

Matrix gradient_reversal(const Matrix& grad, double strength) {
  Matrix out = grad;
  scale(out, -strength);
  return out;
}

void optimizer_step(MlpParams& params, const MlpParams& grads, const OptimizerConfig& config,
                    OptimizerState& state) {
  if (params.size() != grads.size()) throw UsageError("optimizer_step: layer count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].weight.same_shape(grads[k].weight) ||
        params[k].bias.size() != grads[k].bias.size())
      throw UsageError("optimizer_step: gradient shape mismatch at layer " + std::to_string(k));
    if (!all_finite(grads[k].weight) || !all_finite(grads[k].bias))
      throw NumericError("optimizer_step: non-finite gradient at layer " + std::to_string(k));
  }

  if (config.kind == OptKind::kMomentum && state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const DenseLayer& l : params) {
      DenseLayer v;
      v.weight = Matrix(l.weight.rows, l.weight.cols);
      v.bias.assign(l.bias.size(), 0.0);
      state.velocity.push_back(std::move(v));
    }
  }

  const double lr = config.learning_rate;
  for (std::size_t k = 0; k < params.size(); ++k) {
    DenseLayer& p = params[k];
    const DenseLayer& g = grads[k];
    if (config.kind == OptKind::kSgd) {
      for (std::size_t i = 0; i < p.weight.data.size(); ++i)
        p.weight.data[i] -= lr * g.weight.data[i];
      for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
    } else {
      DenseLayer& v = state.velocity[k];
      for (std::size_t i = 0; i < p.weight.data.size(); ++i) {
        v.weight.data[i] = config.momentum * v.weight.data[i] + g.weight.data[i];
        p.weight.data[i] -= lr * v.weight.data[i];
      }
      for (std::size_t i = 0; i < p.bias.size(); ++i) {
        v.bias[i] = config.momentum * v.bias[i] + g.bias[i];
        p.bias[i] -= lr * v.bias[i];
      }
    }
  }
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* li = logits.row(i);
    double* oi = out.row(i);
    double mx = li[0];
    for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, li[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.cols; ++j) {
      oi[j] = std::exp(li[j] - mx);
      sum += oi[j];
    }
    for (std::size_t j = 0; j < logits.cols; ++j) oi[j] /= sum;
  }
  return out;
}

void accumulate(MlpParams& into, const MlpParams& grads) {
  if (into.size() != grads.size()) throw UsageError("accumulate: layer count mismatch");
  for (std::size_t k = 0; k < into.size(); ++k) {
    axpy(1.0, grads[k].weight, into[k].weight);
    for (std::size_t i = 0; i < into[k].bias.size(); ++i) into[k].bias[i] += grads[k].bias[i];
  }
}

}  // namespace dats
