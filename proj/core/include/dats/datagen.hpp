#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dats/matrix.hpp"
#include "dats/simplex.hpp"

namespace dats {

// Invertible per-domain nuisance: x = linear * z + offset with orthogonal
// linear part.
struct DomainTransform {
  Matrix linear;
  std::vector<double> offset;

  Matrix apply(const Matrix& latent) const;
  Matrix invert(const Matrix& observed) const;
};

// Multi-domain generator with shared class-conditional latents. Label
// proportions are honored exactly via largest-remainder allocation; the
// per-domain transforms break the shared-conditional structure in raw space.
struct SyntheticSpec {
  std::size_t num_classes = 2;
  std::size_t num_sources = 2;
  std::size_t dim = 8;
  double class_separation = 1.0;  // latent class means sit at +/- this scale
  double noise_sigma = 0.5;       // isotropic, may be zero
  double rotation_strength = 0.35;  // 0 disables the rotation nuisance
  double offset_scale = 0.5;        // 0 disables the offset nuisance
  bool identity_transforms = false;
  std::vector<SimplexVector> source_proportions;  // empty -> uniform everywhere
  SimplexVector target_proportions;               // empty -> uniform
  std::size_t samples_per_domain = 2000;
  std::uint64_t seed = 1;
};

struct DomainDataset {
  Matrix features;
  std::vector<int> labels;  // -1 marks a withheld label loaded from file
  int domain = 0;
  bool is_target = false;
  bool labels_hidden = false;  // labels present but off limits for training
  std::vector<double> declared_proportions;  // evaluation metadata only
  std::vector<std::size_t> class_counts;
  bool has_empty_class = false;
};

struct SyntheticData {
  std::vector<DomainDataset> domains;  // sources first, target last
  std::vector<DomainTransform> transforms;
  Matrix latent_class_means;  // num_classes x dim
};

// floor(n * p_l) plus largest-remainder correction; deterministic, sums to n.
std::vector<std::size_t> largest_remainder_counts(std::size_t n, const SimplexVector& props);

SyntheticData generate(const SyntheticSpec& spec);

// One instance per requested target class-0 proportion. Source draws are
// shared across instances (same seed stream); only the target varies.
// Requires a two-class spec and proportions strictly inside (0, 1).
std::vector<SyntheticData> proportion_sweep(const SyntheticSpec& spec,
                                            const std::vector<double>& class0_proportions);

struct TabularSchema {
  std::size_t num_domains = 0;
  int target_domain = -1;
};

// CSV with a header row: feature columns, then "label", then "domain".
// Label cells may be empty only on target rows. Malformed rows raise
// DataError with the 1-based line number.
std::vector<DomainDataset> load_tabular(const std::string& path, const TabularSchema& schema);

// Writes the matching CSV plus a "<path>.meta" key-value sidecar carrying
// domain roles and declared proportions. Hidden target labels are written as
// empty cells unless include_hidden_labels is set.
void save_dataset_csv(const std::string& path, const std::vector<DomainDataset>& domains,
                      bool include_hidden_labels = false);

// Parses a "key = value" sidecar.
std::vector<std::pair<std::string, std::string>> read_sidecar(const std::string& path);

}  // namespace dats
