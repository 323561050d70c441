#include "dats/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dats/errors.hpp"

namespace dats {

LossGrad weighted_domain_loss(const Matrix& domain_logits, const std::vector<int>& domain_labels,
                              const std::vector<int>& class_labels,
                              const SimplexVector& domain_weights,
                              const std::vector<ClassRatios>& ratios,
                              const std::vector<std::size_t>& source_counts,
                              std::size_t target_count, std::size_t num_classes) {
  const std::size_t n = domain_logits.rows;
  const std::size_t num_sources = ratios.size();
  if (domain_labels.size() != n || class_labels.size() != n)
    throw UsageError("weighted_domain_loss: label row mismatch");
  if (domain_weights.size() != num_sources || source_counts.size() != num_sources)
    throw UsageError("weighted_domain_loss: one weight and count per source required");
  if (domain_logits.cols != num_sources + 1)
    throw UsageError("weighted_domain_loss: logits must cover sources plus target");
  if (num_classes == 0) throw UsageError("weighted_domain_loss: zero classes");

  for (std::size_t s = 0; s < num_sources; ++s) {
    if (!(ratios[s].l1_norm > 0.0))
      throw DegenerateError("weighted_domain_loss: ratio weights for source " +
                            std::to_string(s) + " sum to zero");
  }

  std::vector<double> weights(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int d = domain_labels[i];
    if (d < 0 || static_cast<std::size_t>(d) > num_sources)
      throw UsageError("weighted_domain_loss: domain label out of range at row " +
                       std::to_string(i));
    if (static_cast<std::size_t>(d) == num_sources) {
      if (target_count == 0) throw UsageError("weighted_domain_loss: zero target count");
      weights[i] = 1.0 / (static_cast<double>(num_classes) * static_cast<double>(target_count));
    } else {
      const int y = class_labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw UsageError("weighted_domain_loss: class label out of range at row " +
                         std::to_string(i));
      if (source_counts[d] == 0)
        throw UsageError("weighted_domain_loss: zero count for source " + std::to_string(d));
      weights[i] = domain_weights[d] * ratios[d].ratio[y] /
                   (static_cast<double>(source_counts[d]) * ratios[d].l1_norm);
    }
  }
  return weighted_cross_entropy(domain_logits, domain_labels, weights);
}

double binary_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw UsageError("binary_auc: length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) {
      ++pos;
    } else if (l == 0) {
      ++neg;
    } else {
      throw UsageError("binary_auc: unsupported for non-binary labels");
    }
  }
  if (pos == 0 || neg == 0)
    throw UsageError("binary_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

EvalMetrics evaluate(const ModelState& state, const DomainDataset& eval_set) {
  if (eval_set.features.rows == 0) throw UsageError("evaluate: empty dataset");
  if (eval_set.labels.size() != eval_set.features.rows)
    throw UsageError("evaluate: labels unavailable for this dataset");
  const std::size_t num_classes = mlp_output_dim(state.label_head);

  const Matrix hidden = mlp_forward(eval_set.features, state.extractor);
  const Matrix probs = mlp_forward(hidden, state.label_head);

  EvalMetrics out;
  out.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  std::vector<std::size_t> per_class_total(num_classes, 0), per_class_hit(num_classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    const int truth = eval_set.labels[i];
    if (truth < 0 || static_cast<std::size_t>(truth) >= num_classes)
      throw UsageError("evaluate: label out of range at row " + std::to_string(i));
    std::size_t pred = 0;
    for (std::size_t j = 1; j < num_classes; ++j)
      if (probs(i, j) > probs(i, pred)) pred = j;
    out.confusion[truth][pred] += 1;
    per_class_total[truth] += 1;
    if (pred == static_cast<std::size_t>(truth)) {
      ++hits;
      per_class_hit[truth] += 1;
    }
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(probs.rows);
  out.per_class_accuracy.resize(num_classes);
  for (std::size_t l = 0; l < num_classes; ++l) {
    out.per_class_accuracy[l] =
        per_class_total[l] == 0
            ? std::numeric_limits<double>::quiet_NaN()
            : static_cast<double>(per_class_hit[l]) / static_cast<double>(per_class_total[l]);
  }

  if (num_classes == 2 && per_class_total[0] > 0 && per_class_total[1] > 0) {
    std::vector<double> scores(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) scores[i] = probs(i, 1);
    out.auc = binary_auc(scores, eval_set.labels);
  }

  if (!eval_set.declared_proportions.empty() &&
      eval_set.declared_proportions.size() == state.proportion_logits.size()) {
    const SimplexVector est = state.target_proportions();
    double l1 = 0.0, linf = 0.0;
    for (std::size_t l = 0; l < est.size(); ++l) {
      const double d = std::abs(est[l] - eval_set.declared_proportions[l]);
      l1 += d;
      linf = std::max(linf, d);
    }
    out.proportion_error_l1 = l1;
    out.proportion_error_linf = linf;
  }
  return out;
}

namespace {

TrainingConfig normalize_config(TrainingConfig config) {
  if (config.mode == TrainMode::kDann) {
    config.mean_match_weight = 0.0;
    config.dist_match_weight = 0.0;
  } else if (config.mode == TrainMode::kMeanOnly) {
    config.dist_match_weight = 0.0;
  }
  if (config.batch_per_domain == 0) throw ConfigError("trainer: zero batch size");
  if (config.extractor_hidden.empty())
    throw ConfigError("trainer: extractor needs at least one layer width");
  if (config.head_hidden == 0) throw ConfigError("trainer: zero head width");
  if (!(config.adversary_strength >= 0.0))
    throw ConfigError("trainer: negative adversary strength");
  if (!(config.proportion_lr >= 0.0)) throw ConfigError("trainer: negative proportion lr");
  return config;
}

}  // namespace

Trainer::Trainer(std::vector<DomainDataset> datasets, TrainingConfig config)
    : config_(normalize_config(std::move(config))), rng_(config_.seed) {
  bool have_target = false;
  for (DomainDataset& ds : datasets) {
    if (ds.is_target) {
      if (have_target) throw UsageError("trainer: more than one target domain");
      target_ = std::move(ds);
      have_target = true;
    } else {
      sources_.push_back(std::move(ds));
    }
  }
  if (!have_target) throw UsageError("trainer: target domain missing");
  if (sources_.empty()) throw UsageError("trainer: at least one source domain required");
  std::sort(sources_.begin(), sources_.end(),
            [](const DomainDataset& a, const DomainDataset& b) { return a.domain < b.domain; });

  const std::size_t dim = target_.features.cols;
  if (target_.features.rows == 0) throw UsageError("trainer: empty target domain");
  int max_label = -1;
  for (const DomainDataset& src : sources_) {
    if (src.features.rows == 0) throw UsageError("trainer: empty source domain");
    if (src.features.cols != dim) throw UsageError("trainer: feature width differs per domain");
    if (src.labels.size() != src.features.rows)
      throw UsageError("trainer: source domain " + std::to_string(src.domain) +
                       " lacks labels");
    for (int l : src.labels) {
      if (l < 0)
        throw UsageError("trainer: source domain " + std::to_string(src.domain) +
                         " has a withheld label");
      max_label = std::max(max_label, l);
    }
    if (src.features.rows < config_.batch_per_domain)
      throw UsageError("trainer: batch_per_domain exceeds source domain " +
                       std::to_string(src.domain));
  }
  if (target_.features.rows < config_.batch_per_domain)
    throw UsageError("trainer: batch_per_domain exceeds the target domain");
  if (max_label < 1) throw UsageError("trainer: need at least two classes in the sources");
  num_classes_ = static_cast<std::size_t>(max_label) + 1;

  for (const DomainDataset& src : sources_)
    source_props_.push_back(source_proportions(src.labels, num_classes_));

  std::vector<std::size_t> hidden(config_.extractor_hidden.begin(),
                                  config_.extractor_hidden.end() - 1);
  const std::size_t feature_width = config_.extractor_hidden.back();
  state_.extractor = make_mlp(dim, hidden, feature_width, Activation::kRelu, rng_);
  state_.label_head = make_mlp(feature_width, {config_.head_hidden}, num_classes_,
                               Activation::kSoftmax, rng_);
  state_.domain_head = make_mlp(feature_width, {config_.head_hidden}, sources_.size() + 1,
                                Activation::kSoftmax, rng_);
  state_.proportion_logits.assign(num_classes_, 0.0);
  state_.domain_weights.weights = SimplexVector::uniform(sources_.size());
  state_.domain_weights.smoothing = config_.weight_smoothing;

  std::size_t min_rows = target_.features.rows;
  for (const DomainDataset& src : sources_) {
    std::vector<std::size_t> pool(src.features.rows);
    std::iota(pool.begin(), pool.end(), 0);
    index_pools_.push_back(std::move(pool));
    min_rows = std::min(min_rows, src.features.rows);
  }
  std::vector<std::size_t> tpool(target_.features.rows);
  std::iota(tpool.begin(), tpool.end(), 0);
  index_pools_.push_back(std::move(tpool));

  epoch_iters_ = config_.grid_refresh_iters > 0
                     ? config_.grid_refresh_iters
                     : std::max<std::size_t>(1, min_rows / config_.batch_per_domain);
}

Matrix Trainer::encode(const Matrix& x) const { return mlp_forward(x, state_.extractor); }

void Trainer::refresh_grids_if_due() {
  const bool first = grids_.empty();
  if (!first && state_.iteration % epoch_iters_ != 0) return;

  std::vector<KernelGrid> next;
  for (std::size_t s = 0; s < sources_.size(); ++s) {
    const Matrix encoded = encode(sources_[s].features);
    BandwidthPolicy policy = config_.bandwidth;
    if (!first && policy.kind == BandwidthPolicy::Kind::kMedianPairwise) {
      // Bandwidth freezes after the first full pass; only anchors move.
      policy.kind = BandwidthPolicy::Kind::kFixed;
      policy.fixed_value = grids_[s].bandwidth;
    }
    next.push_back(build_grid(encoded, sources_[s].labels, num_classes_, policy));
  }
  grids_ = std::move(next);
}

Minibatch Trainer::sample_minibatch() {
  Minibatch batch;
  const std::size_t k = config_.batch_per_domain;
  for (std::size_t s = 0; s < sources_.size(); ++s) {
    std::vector<std::size_t>& pool = index_pools_[s];
    rng_.partial_shuffle(pool, k);
    DomainBatch db;
    db.x = Matrix(k, sources_[s].features.cols);
    db.labels.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::copy(sources_[s].features.row(pool[i]),
                sources_[s].features.row(pool[i]) + sources_[s].features.cols, db.x.row(i));
      db.labels[i] = sources_[s].labels[pool[i]];
    }
    batch.sources.push_back(std::move(db));
  }
  std::vector<std::size_t>& pool = index_pools_.back();
  rng_.partial_shuffle(pool, k);
  batch.target.x = Matrix(k, target_.features.cols);
  for (std::size_t i = 0; i < k; ++i)
    std::copy(target_.features.row(pool[i]), target_.features.row(pool[i]) + target_.features.cols,
              batch.target.x.row(i));
  return batch;
}

MetricsRecord Trainer::step() { return step(sample_minibatch()); }

MetricsRecord Trainer::step(const Minibatch& batch) {
  const std::size_t num_sources = sources_.size();
  if (batch.sources.size() != num_sources)
    throw UsageError("train_step: minibatch must cover every source domain");
  if (batch.target.x.rows == 0) throw UsageError("train_step: minibatch lacks target samples");

  std::size_t n_src = 0;
  std::vector<std::size_t> src_counts(num_sources);
  for (std::size_t s = 0; s < num_sources; ++s) {
    if (batch.sources[s].x.rows == 0)
      throw UsageError("train_step: empty batch for source " + std::to_string(s));
    if (batch.sources[s].labels.size() != batch.sources[s].x.rows)
      throw UsageError("train_step: source batch labels missing");
    src_counts[s] = batch.sources[s].x.rows;
    n_src += src_counts[s];
  }
  const std::size_t n_tgt = batch.target.x.rows;

  // Ratios are derived once from the current proportion estimate and held
  // fixed through the network updates.
  const SimplexVector props_now = state_.target_proportions();
  std::vector<ClassRatios> ratios;
  for (std::size_t s = 0; s < num_sources; ++s)
    ratios.push_back(class_ratios(props_now, source_props_[s], config_.ratio_floor));

  Matrix x_src;
  std::vector<int> labels_src;
  std::vector<int> domain_labels;
  for (std::size_t s = 0; s < num_sources; ++s) {
    x_src = vstack(x_src, batch.sources[s].x);
    labels_src.insert(labels_src.end(), batch.sources[s].labels.begin(),
                      batch.sources[s].labels.end());
    domain_labels.insert(domain_labels.end(), src_counts[s], static_cast<int>(s));
  }
  domain_labels.insert(domain_labels.end(), n_tgt, static_cast<int>(num_sources));
  std::vector<int> class_labels_all = labels_src;
  class_labels_all.insert(class_labels_all.end(), n_tgt, -1);

  // --- 1) label predictor and feature extractor -----------------------------
  ForwardCache cache_h_src, cache_h_tgt;
  mlp_forward(x_src, state_.extractor, &cache_h_src);
  mlp_forward(batch.target.x, state_.extractor, &cache_h_tgt);
  const Matrix& h_src = cache_h_src.post.back();
  const Matrix& h_tgt = cache_h_tgt.post.back();

  ForwardCache cache_label;
  mlp_forward(h_src, state_.label_head, &cache_label);
  const std::vector<double> label_weights(n_src, 1.0 / static_cast<double>(n_src));
  const LossGrad label_lg =
      weighted_cross_entropy(cache_label.pre.back(), labels_src, label_weights);

  ForwardCache cache_dom;
  mlp_forward(vstack(h_src, h_tgt), state_.domain_head, &cache_dom);
  const LossGrad dom_lg = weighted_domain_loss(
      cache_dom.pre.back(), domain_labels, class_labels_all, state_.domain_weights.weights,
      ratios, src_counts, n_tgt, num_classes_);

  MlpGradients label_grads = mlp_backward(cache_label, state_.label_head, label_lg.grad);
  const MlpGradients dom_grads = mlp_backward(cache_dom, state_.domain_head, dom_lg.grad);

  // The adversary reaches the extractor only through the reversal.
  const Matrix reversed = gradient_reversal(dom_grads.input, config_.adversary_strength);
  Matrix grad_h_src = label_grads.input;
  axpy(1.0, take_rows(reversed, 0, n_src), grad_h_src);
  const Matrix grad_h_tgt = take_rows(reversed, n_src, n_tgt);

  MlpGradients ext_grads = mlp_backward(cache_h_src, state_.extractor, grad_h_src);
  const MlpGradients ext_grads_tgt = mlp_backward(cache_h_tgt, state_.extractor, grad_h_tgt);
  accumulate(ext_grads.layers, ext_grads_tgt.layers);

  optimizer_step(state_.label_head, label_grads.layers, config_.net_opt, opt_label_);
  optimizer_step(state_.extractor, ext_grads.layers, config_.net_opt, opt_extractor_);

  // --- 2) domain weights, 3) domain adapter ---------------------------------
  // One forward pass in the updated feature space serves both: its hidden
  // activations refresh the weights, its logits train the adapter.
  const Matrix h2_src = encode(x_src);
  const Matrix h2_tgt = encode(batch.target.x);
  ForwardCache cache_dom2;
  mlp_forward(vstack(h2_src, h2_tgt), state_.domain_head, &cache_dom2);

  if (config_.mode != TrainMode::kDann) {
    const Matrix& z = cache_dom2.post[state_.domain_head.size() - 2];
    std::vector<std::vector<double>> source_z_means;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < num_sources; ++s) {
      source_z_means.push_back(row_mean(take_rows(z, offset, src_counts[s])));
      offset += src_counts[s];
    }
    const std::vector<double> target_z_mean = row_mean(take_rows(z, offset, n_tgt));
    smooth_domain_weights(state_.domain_weights,
                          compute_domain_weights(source_z_means, target_z_mean));
  }

  const LossGrad dom2_lg = weighted_domain_loss(
      cache_dom2.pre.back(), domain_labels, class_labels_all, state_.domain_weights.weights,
      ratios, src_counts, n_tgt, num_classes_);
  MlpGradients dom2_grads = mlp_backward(cache_dom2, state_.domain_head, dom2_lg.grad);
  optimizer_step(state_.domain_head, dom2_grads.layers, config_.net_opt, opt_domain_);

  // --- 4) proportion logits --------------------------------------------------
  // Matching losses only; the networks are never touched from here.
  double mean_loss = 0.0, dist_loss = 0.0;
  if (config_.mode != TrainMode::kDann) {
    std::vector<Matrix> h2_per_source;
    std::vector<ClassMeans> batch_means;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < num_sources; ++s) {
      h2_per_source.push_back(take_rows(h2_src, offset, src_counts[s]));
      batch_means.push_back(class_conditional_means(h2_per_source.back(),
                                                    batch.sources[s].labels, num_classes_));
      offset += src_counts[s];
    }
    const std::vector<double> target_mean = row_mean(h2_tgt);

    const ScalarGrad mm = mean_matching_loss(batch_means, state_.domain_weights.weights,
                                             state_.proportion_logits, target_mean);
    mean_loss = mm.value;
    std::vector<double> grad(num_classes_, 0.0);
    for (std::size_t l = 0; l < num_classes_; ++l)
      grad[l] = config_.mean_match_weight * mm.grad_logits[l];

    if (config_.mode == TrainMode::kDats) {
      refresh_grids_if_due();
      std::vector<MatchStats> stats;
      std::vector<double> stat_weights;
      for (std::size_t s = 0; s < num_sources; ++s) {
        if (!batch_means[s].complete()) continue;  // class missing from this batch
        stats.push_back(estimate_match_stats(h2_tgt, h2_per_source[s],
                                             batch.sources[s].labels, grids_[s],
                                             /*ridge_override=*/-1.0, config_.ridge_scale));
        stat_weights.push_back(state_.domain_weights.weights[s]);
      }
      if (!stats.empty()) {
        const ScalarGrad fm =
            combined_match_loss(stats, SimplexVector::unchecked(std::move(stat_weights)),
                                state_.proportion_logits);
        dist_loss = fm.value;
        for (std::size_t l = 0; l < num_classes_; ++l)
          grad[l] += config_.dist_match_weight * fm.grad_logits[l];
      }
    }

    double gmax = 0.0;
    for (double g : grad) gmax = std::max(gmax, std::abs(g));
    const double clip =
        (config_.proportion_grad_clip > 0.0 && gmax > config_.proportion_grad_clip)
            ? config_.proportion_grad_clip / gmax
            : 1.0;
    const double bound = config_.proportion_logit_bound;
    for (std::size_t l = 0; l < num_classes_; ++l) {
      double next = state_.proportion_logits[l] - config_.proportion_lr * clip * grad[l];
      if (bound > 0.0) next = std::clamp(next, -bound, bound);
      state_.proportion_logits[l] = next;
    }
  }

  state_.iteration += 1;

  MetricsRecord record;
  record.iteration = state_.iteration;
  record.label_loss = label_lg.loss;
  record.domain_loss = dom_lg.loss;
  record.mean_match_loss = mean_loss;
  record.dist_match_loss = dist_loss;
  record.target_proportions = state_.target_proportions().values;
  record.domain_weights = state_.domain_weights.weights.values;
  if (!std::isfinite(record.label_loss) || !std::isfinite(record.domain_loss) ||
      !std::isfinite(record.mean_match_loss) || !std::isfinite(record.dist_match_loss))
    throw NumericError("train_step: non-finite loss at iteration " +
                       std::to_string(record.iteration) + " (label=" +
                       std::to_string(record.label_loss) + ", domain=" +
                       std::to_string(record.domain_loss) + ")");

  if (config_.eval_every > 0 && state_.iteration % config_.eval_every == 0 &&
      target_.labels.size() == target_.features.rows) {
    bool labeled = true;
    for (int l : target_.labels)
      if (l < 0) labeled = false;
    if (labeled) record.target_accuracy = evaluate(state_, target_).accuracy;
  }
  return record;
}

EvalMetrics Trainer::evaluate_target() const { return evaluate(state_, target_); }

TrainResult train(const std::vector<DomainDataset>& datasets, const TrainingConfig& config) {
  Trainer trainer(datasets, config);
  TrainResult result;
  result.history.reserve(config.max_iter);
  for (std::size_t it = 0; it < config.max_iter; ++it) result.history.push_back(trainer.step());
  result.state = trainer.state();
  return result;
}

}  // namespace dats
