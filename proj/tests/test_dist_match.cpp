#include <cmath>

#include "doctest.h"

#include "dats/dist_match.hpp"
#include "dats/errors.hpp"
#include "dats/rng.hpp"
#include "support/test_support.hpp"

using namespace dats;
using dats::test::finite_difference;
using dats::test::max_rel_error;
using dats::test::random_matrix;

namespace {

BandwidthPolicy fixed_bw(double value) {
  BandwidthPolicy p;
  p.kind = BandwidthPolicy::Kind::kFixed;
  p.fixed_value = value;
  return p;
}

// Two well-separated Gaussian classes in the plane, mixed by `class0`.
Matrix two_cluster_sample(std::size_t n, double class0, std::vector<int>* labels, Rng& rng,
                          double sigma = 0.3) {
  Matrix x(n, 2);
  if (labels) labels->resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool first = rng.uniform() < class0;
    const double cx = first ? 2.0 : -2.0;
    x(i, 0) = cx + sigma * rng.normal();
    x(i, 1) = -cx + sigma * rng.normal();
    if (labels) (*labels)[i] = first ? 0 : 1;
  }
  return x;
}

}  // namespace

TEST_CASE("grid of singleton classes holds the samples and their midpoint") {
  Matrix x(2, 2);
  x(0, 0) = 1.0;
  x(0, 1) = 2.0;
  x(1, 0) = 3.0;
  x(1, 1) = 6.0;
  const KernelGrid grid = build_grid(x, {0, 1}, 2, fixed_bw(1.0));
  REQUIRE(grid.size() == 3);
  CHECK(grid.points(0, 0) == doctest::Approx(1.0));
  CHECK(grid.points(1, 1) == doctest::Approx(6.0));
  CHECK(grid.points(2, 0) == doctest::Approx(2.0));  // midpoint
  CHECK(grid.points(2, 1) == doctest::Approx(4.0));
  CHECK_FALSE(grid.degenerate);
}

TEST_CASE("identical samples flag a degenerate grid but keep a usable bandwidth") {
  Matrix x(4, 2, 3.25);
  const KernelGrid grid = build_grid(x, {0, 1, 0, 1}, 2, BandwidthPolicy{});
  CHECK(grid.degenerate);
  CHECK(grid.bandwidth > 0.0);
}

TEST_CASE("grid rows match independently recomputed class means") {
  Rng rng(5);
  std::vector<int> labels;
  const Matrix x = two_cluster_sample(60, 0.4, &labels, rng);
  const KernelGrid grid = build_grid(x, labels, 2, fixed_bw(1.0));
  std::vector<double> sums[2] = {{0.0, 0.0}, {0.0, 0.0}};
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < 60; ++i) {
    counts[labels[i]]++;
    sums[labels[i]][0] += x(i, 0);
    sums[labels[i]][1] += x(i, 1);
  }
  for (int l = 0; l < 2; ++l)
    for (int j = 0; j < 2; ++j)
      CHECK(grid.points(l, j) ==
            doctest::Approx(sums[l][j] / static_cast<double>(counts[l])).epsilon(1e-12));
}

TEST_CASE("a missing class names itself in the error") {
  Matrix x(3, 2, 0.0);
  CHECK_THROWS_WITH_AS(build_grid(x, {0, 0, 0}, 2, fixed_bw(1.0)),
                       doctest::Contains("class 1"), DegenerateError);
}

TEST_CASE("kernel features: exact hit, decay, and the closed-form value") {
  KernelGrid grid;
  grid.points = Matrix(1, 1);
  grid.points(0, 0) = 0.0;
  grid.bandwidth = 1.0;

  CHECK(kernel_features({0.0}, grid)[0] == doctest::Approx(1.0));
  CHECK(kernel_features({1.0}, grid)[0] == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(kernel_features({250.0}, grid)[0] <= 1e-300);
}

TEST_CASE("match stats from one target sample are a rank-one outer product") {
  Matrix x(2, 1);
  x(0, 0) = -1.0;
  x(1, 0) = 1.0;
  const KernelGrid grid = build_grid(x, {0, 1}, 2, fixed_bw(0.7));

  Matrix target(1, 1);
  target(0, 0) = -1.0;  // sits exactly on grid point 0
  const MatchStats stats = estimate_match_stats(target, x, {0, 1}, grid);
  const std::vector<double> phi = kernel_features({-1.0}, grid);
  CHECK(phi[0] == doctest::Approx(1.0));
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      CHECK(stats.second_moment(a, b) == doctest::Approx(phi[a] * phi[b]).epsilon(1e-12));

  // one source sample per class: profile columns are those samples' features
  const std::vector<double> phi1 = kernel_features({1.0}, grid);
  for (std::size_t a = 0; a < 3; ++a) {
    CHECK(stats.class_profiles(a, 0) == doctest::Approx(phi[a]).epsilon(1e-12));
    CHECK(stats.class_profiles(a, 1) == doctest::Approx(phi1[a]).epsilon(1e-12));
  }
}

TEST_CASE("match stats equal a naive double loop on random data") {
  Rng rng(11);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(40, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(30, 0.3, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(1.3));
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);

  Matrix naive_a(3, 3);
  for (std::size_t i = 0; i < target.rows; ++i) {
    const auto phi = kernel_features(target.row(i), 2, grid);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 3; ++b) naive_a(a, b) += phi[a] * phi[b];
  }
  scale(naive_a, 1.0 / 30.0);
  CHECK(max_rel_error(stats.second_moment.data, naive_a.data) <= 1e-12);

  Matrix naive_b(3, 2);
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < source.rows; ++i) {
    const auto phi = kernel_features(source.row(i), 2, grid);
    counts[labels[i]]++;
    for (std::size_t a = 0; a < 3; ++a) naive_b(a, labels[i]) += phi[a];
  }
  for (int l = 0; l < 2; ++l)
    for (std::size_t a = 0; a < 3; ++a) naive_b(a, l) /= static_cast<double>(counts[l]);
  CHECK(max_rel_error(stats.class_profiles.data, naive_b.data) <= 1e-12);
}

TEST_CASE("streaming accumulation equals the one-shot computation") {
  Rng rng(13);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(48, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(36, 0.7, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(0.9));

  const MatchStats oneshot = estimate_match_stats(target, source, labels, grid);

  MatchStatsAccumulator acc(grid, 2);
  // interleave chunks of uneven size
  for (std::size_t i = 0; i < 20; ++i) acc.add_target(target.row(i));
  for (std::size_t i = 0; i < 7; ++i) acc.add_source(source.row(i), labels[i]);
  for (std::size_t i = 20; i < target.rows; ++i) acc.add_target(target.row(i));
  for (std::size_t i = 7; i < source.rows; ++i) acc.add_source(source.row(i), labels[i]);
  const MatchStats chunked = acc.finalize(kDefaultRidgeScale);

  CHECK(max_rel_error(oneshot.second_moment.data, chunked.second_moment.data) <= 1e-10);
  CHECK(max_rel_error(oneshot.class_profiles.data, chunked.class_profiles.data) <= 1e-10);
  CHECK(oneshot.ridge == doctest::Approx(chunked.ridge).epsilon(1e-12));
}

TEST_CASE("empty class in the source raises an incomplete-stats error") {
  Matrix source(2, 1);
  source(0, 0) = -1.0;
  source(1, 0) = 1.0;
  const KernelGrid grid = build_grid(source, {0, 1}, 2, fixed_bw(1.0));
  Matrix target(1, 1, 0.0);
  CHECK_THROWS_AS(estimate_match_stats(target, source, {0, 0}, grid), DegenerateError);
}

TEST_CASE("second moment is positive semidefinite") {
  Rng rng(17);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(50, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(50, 0.2, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, BandwidthPolicy{});
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);
  const std::vector<double> eig = symmetric_eigenvalues(stats.second_moment);
  CHECK(eig.front() >= -1e-10);
  // and the header-stated symmetry bound
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      CHECK(std::abs(stats.second_moment(a, b) - stats.second_moment(b, a)) <= 1e-10);
}

namespace {

MatchStats identity_stats(const Matrix& profiles, double ridge) {
  MatchStats stats;
  stats.second_moment = Matrix(profiles.rows, profiles.rows);
  for (std::size_t i = 0; i < profiles.rows; ++i) stats.second_moment(i, i) = 1.0;
  stats.class_profiles = profiles;
  stats.ridge = ridge;
  return stats;
}

}  // namespace

TEST_CASE("optimal coefficients: identity solve and column selection") {
  Rng rng(19);
  const Matrix profiles = random_matrix(3, 2, rng);
  const MatchStats stats = identity_stats(profiles, 1e-12);

  const SimplexVector mix = SimplexVector::unchecked({0.25, 0.75});
  const std::vector<double> coeffs = optimal_ratio_coeffs(stats, mix);
  const std::vector<double> direct = matvec(profiles, mix.values);
  CHECK(max_rel_error(coeffs, direct) <= 1e-9);

  const std::vector<double> col = optimal_ratio_coeffs(stats, SimplexVector::point_mass(2, 1));
  for (std::size_t a = 0; a < 3; ++a)
    CHECK(col[a] == doctest::Approx(profiles(a, 1)).epsilon(1e-9));
}

TEST_CASE("optimal coefficients are the stationary point of the ridged surrogate") {
  Rng rng(23);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(40, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(40, 0.4, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(1.1));
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);
  const SimplexVector props = SimplexVector::unchecked({0.4, 0.6});
  const std::vector<double> coeffs = optimal_ratio_coeffs(stats, props);

  // surrogate(a) = -1/2 a^T (A + ridge I) a + a^T B p
  const std::vector<double> bp = matvec(stats.class_profiles, props.values);
  auto surrogate = [&](const std::vector<double>& a) {
    double quad = 0.0;
    const std::vector<double> av = matvec(stats.second_moment, a);
    for (std::size_t i = 0; i < a.size(); ++i)
      quad += a[i] * (av[i] + stats.ridge * a[i]);
    return -0.5 * quad + dot(a, bp);
  };
  const std::vector<double> grad = finite_difference(surrogate, coeffs);
  for (double g : grad) CHECK(std::abs(g) <= 1e-7);
}

TEST_CASE("optimal coefficients are linear in the proportion argument") {
  Rng rng(29);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(30, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(30, 0.5, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(1.0));
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);

  const SimplexVector g1 = SimplexVector::unchecked({0.3, 0.2});
  const SimplexVector g2 = SimplexVector::unchecked({0.1, 0.4});
  const SimplexVector sum = SimplexVector::unchecked({0.4, 0.6});
  const std::vector<double> a1 = optimal_ratio_coeffs(stats, g1);
  const std::vector<double> a2 = optimal_ratio_coeffs(stats, g2);
  const std::vector<double> as = optimal_ratio_coeffs(stats, sum);
  for (std::size_t i = 0; i < as.size(); ++i)
    CHECK(as[i] == doctest::Approx(a1[i] + a2[i]).epsilon(1e-9));
}

TEST_CASE("divergence objective: zero profiles give zero everywhere") {
  MatchStats stats = identity_stats(Matrix(3, 2, 0.0), 0.1);
  for (double p0 : {0.1, 0.5, 0.9}) {
    CHECK(f_divergence_value(stats, SimplexVector::unchecked({p0, 1.0 - p0})) == 0.0);
  }
}

TEST_CASE("divergence objective reduces to half the squared profile norm") {
  Rng rng(31);
  const Matrix profiles = random_matrix(4, 3, rng);
  const MatchStats stats = identity_stats(profiles, 1e-13);
  const SimplexVector props = SimplexVector::unchecked({0.2, 0.5, 0.3});
  const std::vector<double> u = matvec(profiles, props.values);
  CHECK(f_divergence_value(stats, props) == doctest::Approx(0.5 * dot(u, u)).epsilon(1e-9));
}

TEST_CASE("divergence value is invariant to shifting all logits") {
  Rng rng(37);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(40, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(40, 0.3, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(1.0));
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);

  const std::vector<double> logits{0.4, -0.8};
  const std::vector<double> shifted{0.4 + 17.0, -0.8 + 17.0};
  CHECK(f_divergence_objective(stats, logits).value ==
        doctest::Approx(f_divergence_objective(stats, shifted).value).epsilon(1e-10));
}

TEST_CASE("divergence gradient matches central differences") {
  Rng rng(41);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(50, 0.6, &labels, rng);
  const Matrix target = two_cluster_sample(50, 0.25, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, BandwidthPolicy{});
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);

  std::vector<double> logits{0.3, -0.2};
  const ScalarGrad out = f_divergence_objective(stats, logits);
  auto f = [&](const std::vector<double>& probe) {
    return f_divergence_objective(stats, probe).value;
  };
  const std::vector<double> numeric = finite_difference(f, logits);
  CHECK(max_rel_error(out.grad_logits, numeric) <= 1e-4);
}

TEST_CASE("grid evaluation puts the divergence minimum at the true mixture") {
  Rng rng(43);
  std::vector<int> labels;
  const double truth = 0.3;
  const Matrix source = two_cluster_sample(600, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(600, truth, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, BandwidthPolicy{});
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);

  double best_p = -1.0, best = 1e300;
  for (int k = 0; k <= 20; ++k) {
    const double p = static_cast<double>(k) / 20.0;
    const double v = f_divergence_value(stats, SimplexVector::unchecked({p, 1.0 - p}));
    if (v < best) {
      best = v;
      best_p = p;
    }
  }
  CHECK(std::abs(best_p - truth) <= 0.05 + 1e-12);
}

TEST_CASE("combined loss is the weighted sum of per-source objectives") {
  Rng rng(47);
  std::vector<int> labels;
  const Matrix source = two_cluster_sample(40, 0.5, &labels, rng);
  const Matrix target = two_cluster_sample(40, 0.4, nullptr, rng);
  const KernelGrid grid = build_grid(source, labels, 2, fixed_bw(1.0));
  const MatchStats stats = estimate_match_stats(target, source, labels, grid);
  const std::vector<double> logits{0.2, -0.1};
  const double solo = f_divergence_objective(stats, logits).value;

  CHECK(combined_match_loss({stats}, SimplexVector::uniform(1), logits).value ==
        doctest::Approx(solo).epsilon(1e-12));

  const ScalarGrad select = combined_match_loss(
      {stats, stats, stats}, SimplexVector::point_mass(3, 1), logits);
  CHECK(select.value == doctest::Approx(solo).epsilon(1e-12));

  const ScalarGrad uniform3 = combined_match_loss(
      {stats, stats, stats}, SimplexVector::uniform(3), logits);
  CHECK(uniform3.value == doctest::Approx(solo).epsilon(1e-12));

  CHECK_THROWS_AS(combined_match_loss({stats, stats}, SimplexVector::uniform(3), logits),
                  UsageError);
}
