#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "dats/datagen.hpp"
#include "dats/dist_match.hpp"
#include "dats/domain_weights.hpp"
#include "dats/matrix.hpp"
#include "dats/nn.hpp"
#include "dats/proportions.hpp"
#include "dats/rng.hpp"
#include "dats/simplex.hpp"

namespace dats {

enum class TrainMode { kDats, kMeanOnly, kDann };

struct TrainingConfig {
  TrainMode mode = TrainMode::kDats;

  double adversary_strength = 1.0;  // scale of the reversed domain gradient
  double mean_match_weight = 1.0;   // forced to 0 in dann mode
  double dist_match_weight = 1.0;   // forced to 0 in dann and mean-only modes

  OptimizerConfig net_opt{0.02, OptKind::kMomentum, 0.9};
  double proportion_lr = 0.05;  // separate step size for the proportion logits
  // The logit walk must stay recoverable while the features are still moving:
  // the step is clipped in infinity norm and the logits live in a bounded box
  // (softmax still reaches proportions beyond 0.997 at the default bound).
  double proportion_grad_clip = 1.0;
  double proportion_logit_bound = 6.0;

  std::size_t batch_per_domain = 32;
  std::size_t max_iter = 2000;
  std::uint64_t seed = 0;

  std::vector<std::size_t> extractor_hidden{64, 64};  // last entry is the feature width
  std::size_t head_hidden = 32;

  double ratio_floor = 1e-6;
  double weight_smoothing = 0.9;
  double ridge_scale = kDefaultRidgeScale;
  BandwidthPolicy bandwidth;
  std::size_t grid_refresh_iters = 0;  // 0 -> once per epoch of the smallest domain
  std::size_t eval_every = 0;          // 0 -> only on request
};

struct ModelState {
  MlpParams extractor;
  MlpParams label_head;
  MlpParams domain_head;
  std::vector<double> proportion_logits;  // softmax -> estimated target proportions
  DomainWeightState domain_weights;
  std::size_t iteration = 0;

  SimplexVector target_proportions() const { return softmax_simplex(proportion_logits); }
};

struct MetricsRecord {
  std::size_t iteration = 0;
  double label_loss = 0.0;
  double domain_loss = 0.0;
  double mean_match_loss = 0.0;
  double dist_match_loss = 0.0;
  std::vector<double> target_proportions;
  std::vector<double> domain_weights;
  double target_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct DomainBatch {
  Matrix x;
  std::vector<int> labels;  // empty for the target
};

struct Minibatch {
  std::vector<DomainBatch> sources;
  DomainBatch target;
};

// Domain-classification loss with per-sample weights: a source sample of
// class y in source s carries weight
//     domain_weights[s] * ratios[s].ratio[y] / (source_counts[s] * ratios[s].l1_norm)
// and every target sample carries 1 / (num_classes * target_count).
// domain_labels use 0..S-1 for sources and S for the target; class_labels are
// ignored (may be -1) on target rows.
LossGrad weighted_domain_loss(const Matrix& domain_logits, const std::vector<int>& domain_labels,
                              const std::vector<int>& class_labels,
                              const SimplexVector& domain_weights,
                              const std::vector<ClassRatios>& ratios,
                              const std::vector<std::size_t>& source_counts,
                              std::size_t target_count, std::size_t num_classes);

struct EvalMetrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  double auc = std::numeric_limits<double>::quiet_NaN();  // binary problems only
  std::vector<std::vector<std::size_t>> confusion;        // [true][predicted]
  double proportion_error_l1 = std::numeric_limits<double>::quiet_NaN();
  double proportion_error_linf = std::numeric_limits<double>::quiet_NaN();
};

// Rank-statistic AUC for scores of the positive class; ties get midranks.
// Throws UsageError unless labels are drawn from {0, 1}.
double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Label-head metrics on a labeled set. Proportion errors are filled when the
// dataset declares its true proportions.
EvalMetrics evaluate(const ModelState& state, const DomainDataset& eval_set);

// Alternating update loop. Construction fixes the architecture, source label
// proportions, and seeds; step() then performs one full iteration:
//   1. label predictor + feature extractor (reversed, weighted domain gradient)
//   2. domain-weight refresh with exponential smoothing
//   3. domain adapter
//   4. proportion logits (matching losses only; never the networks)
class Trainer {
 public:
  Trainer(std::vector<DomainDataset> datasets, TrainingConfig config);

  Minibatch sample_minibatch();
  MetricsRecord step();
  MetricsRecord step(const Minibatch& batch);

  const ModelState& state() const { return state_; }
  ModelState& mutable_state() { return state_; }
  const TrainingConfig& config() const { return config_; }
  const std::vector<SimplexVector>& source_label_proportions() const { return source_props_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_sources() const { return sources_.size(); }
  const DomainDataset& target_data() const { return target_; }

  EvalMetrics evaluate_target() const;

 private:
  void refresh_grids_if_due();
  Matrix encode(const Matrix& x) const;

  TrainingConfig config_;
  std::vector<DomainDataset> sources_;
  DomainDataset target_;
  std::size_t num_classes_ = 0;
  std::vector<SimplexVector> source_props_;
  ModelState state_;
  OptimizerState opt_extractor_, opt_label_, opt_domain_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> index_pools_;  // per source, then target
  std::vector<KernelGrid> grids_;                      // per source
  double frozen_bandwidth_ = -1.0;
  std::size_t epoch_iters_ = 1;
};

struct TrainResult {
  ModelState state;
  std::vector<MetricsRecord> history;
};

TrainResult train(const std::vector<DomainDataset>& datasets, const TrainingConfig& config);

}  // namespace dats
