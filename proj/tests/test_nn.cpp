#include <cmath>

#include "doctest.h"

#include "dats/errors.hpp"
#include "dats/nn.hpp"
#include "support/test_support.hpp"

using namespace dats;
using dats::test::finite_difference;
using dats::test::flatten;
using dats::test::max_rel_error;
using dats::test::random_matrix;
using dats::test::unflatten;

namespace {

DenseLayer identity_layer(std::size_t n, Activation act = Activation::kIdentity) {
  DenseLayer l;
  l.weight = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) l.weight(i, i) = 1.0;
  l.bias.assign(n, 0.0);
  l.act = act;
  return l;
}

}  // namespace

TEST_CASE("forward through an identity layer is the identity") {
  MlpParams net{identity_layer(2)};
  Matrix x(1, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  const Matrix y = mlp_forward(x, net);
  CHECK(y(0, 0) == doctest::Approx(1.0));
  CHECK(y(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("relu layer clips negatives") {
  MlpParams net{identity_layer(2, Activation::kRelu)};
  Matrix x(1, 2);
  x(0, 0) = -3.0;
  x(0, 1) = 4.0;
  const Matrix y = mlp_forward(x, net);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(0, 1) == doctest::Approx(4.0));
}

TEST_CASE("forward matches a hand-rolled evaluation on two random layers") {
  Rng rng(11);
  MlpParams net = make_mlp(3, {4}, 2, Activation::kIdentity, rng);
  const Matrix x = random_matrix(5, 3, rng);
  const Matrix y = mlp_forward(x, net);

  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<double> a(x.row(i), x.row(i) + 3);
    for (const DenseLayer& layer : net) {
      std::vector<double> z(layer.weight.rows, 0.0);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        z[o] = layer.bias[o];
        for (std::size_t in = 0; in < layer.weight.cols; ++in)
          z[o] += layer.weight(o, in) * a[in];
        if (layer.act == Activation::kRelu && z[o] < 0.0) z[o] = 0.0;
      }
      a = z;
    }
    for (std::size_t j = 0; j < 2; ++j) CHECK(y(i, j) == doctest::Approx(a[j]).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic and rejects mismatched input") {
  Rng rng(3);
  MlpParams net = make_mlp(4, {5}, 3, Activation::kSoftmax, rng);
  const Matrix x = random_matrix(6, 4, rng);
  const Matrix a = mlp_forward(x, net);
  const Matrix b = mlp_forward(x, net);
  CHECK(a.data == b.data);

  const Matrix bad = random_matrix(2, 3, rng);
  CHECK_THROWS_AS(mlp_forward(bad, net), ConfigError);
}

TEST_CASE("softmax head rows are distributions") {
  Rng rng(17);
  MlpParams net = make_mlp(3, {8}, 4, Activation::kSoftmax, rng);
  const Matrix x = random_matrix(32, 3, rng, 5.0);
  const Matrix y = mlp_forward(x, net);
  for (std::size_t i = 0; i < y.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < y.cols; ++j) {
      CHECK(y(i, j) >= 0.0);
      sum += y(i, j);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("cross entropy of uniform logits is log K") {
  Matrix logits(4, 2, 0.7);  // equal within each row
  std::vector<int> labels{0, 1, 0, 1};
  std::vector<double> weights(4, 0.25);
  const LossGrad lg = weighted_cross_entropy(logits, labels, weights);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("zero weights give exactly zero loss and gradient") {
  Rng rng(5);
  const Matrix logits = random_matrix(3, 4, rng, 10.0);
  std::vector<int> labels{1, 3, 0};
  std::vector<double> weights(3, 0.0);
  const LossGrad lg = weighted_cross_entropy(logits, labels, weights);
  CHECK(lg.loss == 0.0);
  for (double g : lg.grad.data) CHECK(g == 0.0);
}

TEST_CASE("cross entropy rejects non-finite logits with the offending index") {
  Matrix logits(2, 2, 0.0);
  logits(1, 0) = std::numeric_limits<double>::infinity();
  std::vector<int> labels{0, 1};
  std::vector<double> weights{0.5, 0.5};
  CHECK_THROWS_WITH_AS(weighted_cross_entropy(logits, labels, weights),
                       doctest::Contains("(1,0)"), NumericError);
}

TEST_CASE("cross entropy gradient matches central differences") {
  Rng rng(23);
  Matrix logits = random_matrix(4, 3, rng);
  std::vector<int> labels{2, 0, 1, 1};
  std::vector<double> weights{0.1, 0.4, 0.2, 0.3};
  const LossGrad lg = weighted_cross_entropy(logits, labels, weights);

  auto f = [&](const std::vector<double>& flat) {
    Matrix probe = logits;
    probe.data = flat;
    return weighted_cross_entropy(probe, labels, weights).loss;
  };
  const std::vector<double> numeric = finite_difference(f, logits.data);
  CHECK(max_rel_error(lg.grad.data, numeric) <= 1e-6);
}

TEST_CASE("backward through an identity network passes the gradient through") {
  MlpParams net{identity_layer(3)};
  Matrix x = Matrix(2, 3, 0.5);
  ForwardCache cache;
  mlp_forward(x, net, &cache);
  Rng rng(7);
  const Matrix upstream = random_matrix(2, 3, rng);
  const MlpGradients grads = mlp_backward(cache, net, upstream);
  CHECK(grads.input.data == upstream.data);
}

TEST_CASE("zero upstream gradient zeroes every parameter gradient") {
  Rng rng(9);
  MlpParams net = make_mlp(3, {4, 4}, 2, Activation::kIdentity, rng);
  const Matrix x = random_matrix(5, 3, rng);
  ForwardCache cache;
  mlp_forward(x, net, &cache);
  const MlpGradients grads = mlp_backward(cache, net, Matrix(5, 2, 0.0));
  for (const DenseLayer& l : grads.layers) {
    for (double g : l.weight.data) CHECK(g == 0.0);
    for (double g : l.bias) CHECK(g == 0.0);
  }
}

TEST_CASE("backward rejects a stale cache") {
  Rng rng(13);
  MlpParams net = make_mlp(3, {4}, 2, Activation::kIdentity, rng);
  ForwardCache cache;
  mlp_forward(random_matrix(5, 3, rng), net, &cache);
  MlpParams other = make_mlp(3, {6}, 2, Activation::kIdentity, rng);
  CHECK_THROWS_AS(mlp_backward(cache, other, Matrix(5, 2, 1.0)), UsageError);
}

static double net_loss(const MlpParams& net, const Matrix& x, const std::vector<int>& labels,
                       const std::vector<double>& weights) {
  ForwardCache cache;
  mlp_forward(x, net, &cache);
  return weighted_cross_entropy(cache.pre.back(), labels, weights).loss;
}

namespace {

// Central differences are only a valid oracle away from the relu kinks; skip
// draws that put a pre-activation within reach of the probe step.
bool near_relu_kink(const ForwardCache& cache, const MlpParams& net, double margin = 1e-3) {
  for (std::size_t k = 0; k < net.size(); ++k) {
    if (net[k].act != Activation::kRelu) continue;
    for (double v : cache.pre[k].data)
      if (std::abs(v) < margin) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("every parameter gradient matches central differences on small random nets") {
  Rng rng(31);
  int done = 0;
  for (int attempt = 0; attempt < 50 && done < 3; ++attempt) {
    MlpParams net = make_mlp(4, {7, 5}, 3, Activation::kSoftmax, rng);
    const Matrix x = random_matrix(6, 4, rng);
    std::vector<int> labels;
    std::vector<double> weights;
    for (int i = 0; i < 6; ++i) {
      labels.push_back(static_cast<int>(rng.index(3)));
      weights.push_back(rng.uniform(0.05, 0.4));
    }

    ForwardCache cache;
    mlp_forward(x, net, &cache);
    if (near_relu_kink(cache, net)) continue;
    ++done;
    const LossGrad lg = weighted_cross_entropy(cache.pre.back(), labels, weights);
    const MlpGradients grads = mlp_backward(cache, net, lg.grad);

    auto f = [&](const std::vector<double>& flat) {
      MlpParams probe = net;
      unflatten(flat, probe);
      return net_loss(probe, x, labels, weights);
    };
    const std::vector<double> numeric = finite_difference(f, flatten(net));
    CHECK(max_rel_error(flatten(grads.layers), numeric) <= 1e-6);
  }
  CHECK(done == 3);
}

TEST_CASE("gradient reversal scales and flips") {
  Matrix g(1, 2);
  g(0, 0) = 2.0;
  g(0, 1) = -3.0;
  const Matrix zero = gradient_reversal(g, 0.0);
  CHECK(zero(0, 0) == 0.0);
  CHECK(zero(0, 1) == 0.0);
  const Matrix flipped = gradient_reversal(g, 1.0);
  CHECK(flipped(0, 0) == doctest::Approx(-2.0));
  CHECK(flipped(0, 1) == doctest::Approx(3.0));
}

TEST_CASE("gradient reversal is stateless and linear") {
  Rng rng(41);
  const Matrix g1 = random_matrix(3, 4, rng);
  const Matrix g2 = random_matrix(3, 4, rng);
  Matrix sum = g1;
  axpy(1.0, g2, sum);
  const Matrix lhs = gradient_reversal(sum, 1.7);
  Matrix rhs = gradient_reversal(g1, 1.7);
  axpy(1.0, gradient_reversal(g2, 1.7), rhs);
  CHECK(max_rel_error(lhs.data, rhs.data) <= 1e-12);
  // opposite strengths cancel
  Matrix cancel = gradient_reversal(g1, 0.9);
  axpy(1.0, gradient_reversal(g1, -0.9), cancel);
  for (double v : cancel.data) CHECK(v == 0.0);
}

TEST_CASE("composed extractor gradient equals label minus scaled domain gradient") {
  // Two heads share one extractor; the reversed domain gradient must combine
  // with the label gradient exactly as the composite objective prescribes.
  Rng rng(47);
  const double adversary = 0.8;
  MlpParams extractor = make_mlp(3, {6}, 4, Activation::kRelu, rng);
  MlpParams label_head = make_mlp(4, {5}, 2, Activation::kSoftmax, rng);
  MlpParams domain_head = make_mlp(4, {5}, 2, Activation::kSoftmax, rng);
  const Matrix x = random_matrix(6, 3, rng);
  std::vector<int> labels{0, 1, 1, 0, 1, 0};
  std::vector<int> domains{0, 0, 0, 1, 1, 1};
  const std::vector<double> w(6, 1.0 / 6.0);

  auto composite = [&](const MlpParams& ext) {
    const Matrix h = mlp_forward(x, ext);
    ForwardCache cl, cd;
    mlp_forward(h, label_head, &cl);
    mlp_forward(h, domain_head, &cd);
    const double ly = weighted_cross_entropy(cl.pre.back(), labels, w).loss;
    const double ld = weighted_cross_entropy(cd.pre.back(), domains, w).loss;
    return ly - adversary * ld;
  };

  ForwardCache ch;
  mlp_forward(x, extractor, &ch);
  const Matrix& h = ch.post.back();
  ForwardCache cl, cd;
  mlp_forward(h, label_head, &cl);
  mlp_forward(h, domain_head, &cd);
  const LossGrad ly = weighted_cross_entropy(cl.pre.back(), labels, w);
  const LossGrad ld = weighted_cross_entropy(cd.pre.back(), domains, w);
  Matrix grad_h = mlp_backward(cl, label_head, ly.grad).input;
  axpy(1.0, gradient_reversal(mlp_backward(cd, domain_head, ld.grad).input, adversary), grad_h);
  const MlpGradients analytic = mlp_backward(ch, extractor, grad_h);

  auto f = [&](const std::vector<double>& flat) {
    MlpParams probe = extractor;
    unflatten(flat, probe);
    return composite(probe);
  };
  const std::vector<double> numeric = finite_difference(f, flatten(extractor));
  CHECK(max_rel_error(flatten(analytic.layers), numeric) <= 1e-4);
}

TEST_CASE("optimizer: zero learning rate leaves parameters alone") {
  Rng rng(3);
  MlpParams net = make_mlp(2, {}, 2, Activation::kIdentity, rng);
  MlpParams grads = net;
  const MlpParams before = net;
  OptimizerState state;
  optimizer_step(net, grads, {0.0, OptKind::kSgd, 0.0}, state);
  CHECK(flatten(net) == flatten(before));
}

TEST_CASE("optimizer: plain sgd arithmetic") {
  MlpParams net{identity_layer(1)};
  net[0].weight(0, 0) = 1.0;
  MlpParams grads{identity_layer(1)};
  grads[0].weight(0, 0) = 2.0;
  grads[0].bias[0] = 0.0;
  OptimizerState state;
  optimizer_step(net, grads, {0.1, OptKind::kSgd, 0.0}, state);
  CHECK(net[0].weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("optimizer: momentum trace matches the hand-computed recurrence") {
  MlpParams net{identity_layer(1)};
  net[0].weight(0, 0) = 1.0;
  net[0].bias[0] = 0.0;
  OptimizerState state;
  const OptimizerConfig cfg{0.1, OptKind::kMomentum, 0.5};

  MlpParams g{identity_layer(1)};
  g[0].bias[0] = 0.0;

  // step 1: g = 2, v = 2,      p = 1 - 0.1*2   = 0.8
  g[0].weight(0, 0) = 2.0;
  optimizer_step(net, g, cfg, state);
  CHECK(net[0].weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  // step 2: g = 1, v = 2,      p = 0.8 - 0.1*2 = 0.6
  g[0].weight(0, 0) = 1.0;
  optimizer_step(net, g, cfg, state);
  CHECK(net[0].weight(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("optimizer rejects non-finite gradients") {
  Rng rng(3);
  MlpParams net = make_mlp(2, {}, 2, Activation::kIdentity, rng);
  MlpParams grads = net;
  grads[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  OptimizerState state;
  CHECK_THROWS_AS(optimizer_step(net, grads, {0.1, OptKind::kSgd, 0.0}, state), NumericError);
}
