#include "dats/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dats/errors.hpp"
#include "dats/rng.hpp"

namespace dats {

Matrix DomainTransform::apply(const Matrix& latent) const {
  Matrix out = matmul_nt(latent, linear);  // rows map through the linear part
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* oi = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) oi[j] += offset[j];
  }
  return out;
}

Matrix DomainTransform::invert(const Matrix& observed) const {
  Matrix shifted = observed;
  for (std::size_t i = 0; i < shifted.rows; ++i) {
    double* si = shifted.row(i);
    for (std::size_t j = 0; j < shifted.cols; ++j) si[j] -= offset[j];
  }
  return matmul(shifted, linear);  // linear is orthogonal, inverse = transpose
}

std::vector<std::size_t> largest_remainder_counts(std::size_t n, const SimplexVector& props) {
  props.validate();
  const std::size_t k = props.size();
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < k; ++l) {
    const double exact = static_cast<double>(n) * props[l];
    counts[l] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[l];
    remainders[l] = {exact - std::floor(exact), l};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) counts[remainders[i].second] += 1;
  return counts;
}

namespace {

Matrix latent_class_means(const SyntheticSpec& spec) {
  Matrix means(spec.num_classes, spec.dim);
  if (spec.num_classes == 2) {
    const double unit = spec.class_separation / std::sqrt(static_cast<double>(spec.dim));
    for (std::size_t j = 0; j < spec.dim; ++j) {
      means(0, j) = unit;
      means(1, j) = -unit;
    }
  } else {
    if (spec.num_classes > spec.dim)
      throw ConfigError("generate: need dim >= num_classes for axis-aligned class means");
    for (std::size_t l = 0; l < spec.num_classes; ++l)
      means(l, l) = spec.class_separation;
  }
  return means;
}

DomainTransform make_transform(const SyntheticSpec& spec, Rng& rng) {
  DomainTransform t;
  t.linear = Matrix(spec.dim, spec.dim);
  for (std::size_t j = 0; j < spec.dim; ++j) t.linear(j, j) = 1.0;
  t.offset.assign(spec.dim, 0.0);
  if (spec.identity_transforms) return t;

  // Orthogonal nuisance: two passes of plane rotations over randomly paired
  // axes, with angles scaled by rotation_strength.
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<std::size_t> axes(spec.dim);
    std::iota(axes.begin(), axes.end(), 0);
    rng.shuffle(axes);
    for (std::size_t i = 0; i + 1 < spec.dim; i += 2) {
      const std::size_t p = axes[i], q = axes[i + 1];
      const double theta = spec.rotation_strength * rng.uniform(-M_PI, M_PI);
      const double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        const double rp = t.linear(p, j), rq = t.linear(q, j);
        t.linear(p, j) = c * rp - s * rq;
        t.linear(q, j) = s * rp + c * rq;
      }
    }
  }
  for (double& b : t.offset) b = spec.offset_scale * rng.normal();
  return t;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("generate: need at least two classes");
  if (spec.num_sources < 1) throw ConfigError("generate: need at least one source domain");
  if (spec.dim == 0) throw ConfigError("generate: zero feature dimension");
  if (spec.samples_per_domain == 0) throw ConfigError("generate: zero samples per domain");
  if (!(spec.noise_sigma >= 0.0)) throw ConfigError("generate: negative noise sigma");
  if (!spec.source_proportions.empty() &&
      spec.source_proportions.size() != spec.num_sources)
    throw ConfigError("generate: one proportion vector per source required");
}

SimplexVector domain_proportions(const SyntheticSpec& spec, std::size_t domain) {
  const bool is_target = domain == spec.num_sources;
  if (is_target) {
    if (spec.target_proportions.size() == 0)
      return SimplexVector::uniform(spec.num_classes);
    if (spec.target_proportions.size() != spec.num_classes)
      throw ConfigError("generate: target proportion length mismatch");
    return spec.target_proportions;
  }
  if (spec.source_proportions.empty()) return SimplexVector::uniform(spec.num_classes);
  const SimplexVector& p = spec.source_proportions[domain];
  if (p.size() != spec.num_classes)
    throw ConfigError("generate: source proportion length mismatch");
  return p;
}

}  // namespace

SyntheticData generate(const SyntheticSpec& spec) {
  validate_spec(spec);
  SyntheticData out;
  out.latent_class_means = latent_class_means(spec);

  const std::size_t num_domains = spec.num_sources + 1;
  for (std::size_t domain = 0; domain < num_domains; ++domain) {
    Rng rng(mix_seed(spec.seed, domain));
    const DomainTransform transform = make_transform(spec, rng);
    const SimplexVector props = domain_proportions(spec, domain);
    const std::vector<std::size_t> counts =
        largest_remainder_counts(spec.samples_per_domain, props);

    Matrix latent(spec.samples_per_domain, spec.dim);
    std::vector<int> labels(spec.samples_per_domain);
    std::size_t row = 0;
    for (std::size_t l = 0; l < spec.num_classes; ++l) {
      for (std::size_t i = 0; i < counts[l]; ++i, ++row) {
        labels[row] = static_cast<int>(l);
        double* zi = latent.row(row);
        for (std::size_t j = 0; j < spec.dim; ++j)
          zi[j] = out.latent_class_means(l, j) + spec.noise_sigma * rng.normal();
      }
    }

    std::vector<std::size_t> order(spec.samples_per_domain);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    DomainDataset ds;
    ds.domain = static_cast<int>(domain);
    ds.is_target = domain == spec.num_sources;
    ds.labels_hidden = ds.is_target;
    ds.declared_proportions = props.values;
    ds.class_counts = counts;
    ds.has_empty_class =
        std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; });
    ds.features = Matrix(spec.samples_per_domain, spec.dim);
    ds.labels.resize(spec.samples_per_domain);
    Matrix shuffled(spec.samples_per_domain, spec.dim);
    for (std::size_t i = 0; i < order.size(); ++i) {
      ds.labels[i] = labels[order[i]];
      std::copy(latent.row(order[i]), latent.row(order[i]) + spec.dim, shuffled.row(i));
    }
    ds.features = transform.apply(shuffled);

    out.domains.push_back(std::move(ds));
    out.transforms.push_back(transform);
  }
  return out;
}

std::vector<SyntheticData> proportion_sweep(const SyntheticSpec& spec,
                                            const std::vector<double>& class0_proportions) {
  if (spec.num_classes != 2)
    throw UsageError("proportion_sweep: the sweep protocol needs exactly two classes");
  std::vector<SyntheticData> out;
  out.reserve(class0_proportions.size());
  for (double p : class0_proportions) {
    if (!(p > 0.0 && p < 1.0))
      throw UsageError("proportion_sweep: proportion " + std::to_string(p) +
                       " outside (0, 1)");
    SyntheticSpec point = spec;
    point.target_proportions = SimplexVector::unchecked({p, 1.0 - p});
    out.push_back(generate(point));
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim surrounding whitespace
    const auto first = cell.find_first_not_of(" \t\r");
    const auto last = cell.find_last_not_of(" \t\r");
    cells.push_back(first == std::string::npos ? "" : cell.substr(first, last - first + 1));
  }
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

double parse_double(const std::string& cell, std::size_t line_no, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
    throw DataError("line " + std::to_string(line_no) + ": bad value '" + cell +
                    "' in column " + col);
  return v;
}

long parse_int(const std::string& cell, std::size_t line_no, const std::string& col) {
  char* end = nullptr;
  const long v = std::strtol(cell.c_str(), &end, 10);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw DataError("line " + std::to_string(line_no) + ": bad integer '" + cell +
                    "' in column " + col);
  return v;
}

}  // namespace

std::vector<DomainDataset> load_tabular(const std::string& path, const TabularSchema& schema) {
  if (schema.num_domains == 0) throw ConfigError("load_tabular: num_domains must be set");
  if (schema.target_domain >= static_cast<int>(schema.num_domains))
    throw ConfigError("load_tabular: target_domain out of range");
  std::ifstream in(path);
  if (!in) throw DataError("load_tabular: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError("load_tabular: empty file " + path);
  const std::vector<std::string> header = split_csv_line(line);
  std::size_t label_col = header.size(), domain_col = header.size();
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "label") {
      label_col = c;
    } else if (header[c] == "domain") {
      domain_col = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_col == header.size() || domain_col == header.size())
    throw DataError("load_tabular: header must contain 'label' and 'domain' columns");
  if (feature_cols.empty()) throw DataError("load_tabular: no feature columns");

  struct Rows {
    std::vector<double> features;
    std::vector<int> labels;
  };
  std::vector<Rows> by_domain(schema.num_domains);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));

    const long domain = parse_int(cells[domain_col], line_no, "domain");
    if (domain < 0 || domain >= static_cast<long>(schema.num_domains))
      throw DataError("line " + std::to_string(line_no) + ": unknown domain id " +
                      std::to_string(domain));

    int label = -1;
    if (cells[label_col].empty()) {
      if (domain != schema.target_domain)
        throw DataError("line " + std::to_string(line_no) +
                        ": missing label on a source row");
    } else {
      const long raw = parse_int(cells[label_col], line_no, "label");
      if (raw < 0)
        throw DataError("line " + std::to_string(line_no) + ": negative label");
      label = static_cast<int>(raw);
    }

    Rows& rows = by_domain[domain];
    for (std::size_t c : feature_cols)
      rows.features.push_back(parse_double(cells[c], line_no, header[c]));
    rows.labels.push_back(label);
  }

  std::vector<DomainDataset> out;
  const std::size_t dim = feature_cols.size();
  for (std::size_t domain = 0; domain < schema.num_domains; ++domain) {
    Rows& rows = by_domain[domain];
    if (rows.labels.empty())
      throw DataError("load_tabular: domain " + std::to_string(domain) + " has no rows");
    DomainDataset ds;
    ds.domain = static_cast<int>(domain);
    ds.is_target = static_cast<int>(domain) == schema.target_domain;
    ds.labels_hidden = ds.is_target;
    ds.features = Matrix(rows.labels.size(), dim);
    ds.features.data = std::move(rows.features);
    ds.labels = std::move(rows.labels);
    out.push_back(std::move(ds));
  }
  return out;
}

void save_dataset_csv(const std::string& path, const std::vector<DomainDataset>& domains,
                      bool include_hidden_labels) {
  if (domains.empty()) throw UsageError("save_dataset_csv: nothing to write");
  std::ofstream out(path);
  if (!out) throw DataError("save_dataset_csv: cannot open " + path);
  const std::size_t dim = domains.front().features.cols;

  for (std::size_t j = 0; j < dim; ++j) out << "f" << j << ",";
  out << "label,domain\n";

  char buf[40];
  for (const DomainDataset& ds : domains) {
    const bool write_labels = !ds.labels_hidden || include_hidden_labels;
    for (std::size_t i = 0; i < ds.features.rows; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, j));
        out << buf << ",";
      }
      if (write_labels && i < ds.labels.size() && ds.labels[i] >= 0) out << ds.labels[i];
      out << "," << ds.domain << "\n";
    }
  }
  out.close();

  std::ofstream meta(path + ".meta");
  if (!meta) throw DataError("save_dataset_csv: cannot open " + path + ".meta");
  meta << "# dataset sidecar; values here are for evaluation only\n";
  meta << "num_domains = " << domains.size() << "\n";
  for (const DomainDataset& ds : domains) {
    if (ds.is_target) meta << "target_domain = " << ds.domain << "\n";
  }
  meta << "feature_dim = " << dim << "\n";
  for (const DomainDataset& ds : domains) {
    meta << "rows_domain_" << ds.domain << " = " << ds.features.rows << "\n";
    if (!ds.declared_proportions.empty()) {
      meta << "true_proportions_domain_" << ds.domain << " = ";
      for (std::size_t l = 0; l < ds.declared_proportions.size(); ++l) {
        if (l) meta << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", ds.declared_proportions[l]);
        meta << buf;
      }
      meta << "\n";
    }
  }
}

std::vector<std::pair<std::string, std::string>> read_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_sidecar: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r");
      const auto last = s.find_last_not_of(" \t\r");
      return first == std::string::npos ? std::string() : s.substr(first, last - first + 1);
    };
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

}  // namespace dats
