#include "dats/model_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dats/errors.hpp"

namespace dats {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'T', 'S', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kOrderTag = 0x01020304u;

void write_raw(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw DataError("save_model: write failed");
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  write_raw(out, &v, sizeof(T));
}

void read_raw(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (in.gcount() != static_cast<std::streamsize>(n))
    throw DataError("load_model: truncated file");
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  read_raw(in, &v, sizeof(T));
  return v;
}

void write_doubles(std::ostream& out, const std::vector<double>& v) {
  write_pod<std::uint64_t>(out, v.size());
  if (!v.empty()) write_raw(out, v.data(), v.size() * sizeof(double));
}

std::vector<double> read_doubles(std::istream& in) {
  const std::uint64_t n = read_pod<std::uint64_t>(in);
  if (n > (1ull << 32)) throw DataError("load_model: implausible vector length");
  std::vector<double> v(n);
  if (n) read_raw(in, v.data(), n * sizeof(double));
  return v;
}

void write_stack(std::ostream& out, const MlpParams& params) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const DenseLayer& l : params) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.rows));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(l.weight.cols));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(l.act));
    write_doubles(out, l.weight.data);
    write_doubles(out, l.bias);
  }
}

MlpParams read_stack(std::istream& in) {
  const std::uint32_t depth = read_pod<std::uint32_t>(in);
  if (depth == 0 || depth > 64) throw DataError("load_model: bad layer count");
  MlpParams params;
  for (std::uint32_t k = 0; k < depth; ++k) {
    DenseLayer l;
    const std::uint32_t rows = read_pod<std::uint32_t>(in);
    const std::uint32_t cols = read_pod<std::uint32_t>(in);
    const std::uint32_t act = read_pod<std::uint32_t>(in);
    if (act > 2) throw DataError("load_model: bad activation tag");
    l.act = static_cast<Activation>(act);
    l.weight = Matrix(rows, cols);
    l.weight.data = read_doubles(in);
    if (l.weight.data.size() != static_cast<std::size_t>(rows) * cols)
      throw DataError("load_model: weight payload size mismatch");
    l.bias = read_doubles(in);
    if (l.bias.size() != rows) throw DataError("load_model: bias payload size mismatch");
    params.push_back(std::move(l));
  }
  return params;
}

}  // namespace

void save_model(const std::string& path, const ModelState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_model: cannot open " + path);
  write_raw(out, kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, kOrderTag);
  write_stack(out, state.extractor);
  write_stack(out, state.label_head);
  write_stack(out, state.domain_head);
  write_doubles(out, state.proportion_logits);
  write_doubles(out, state.domain_weights.weights.values);
  write_pod<double>(out, state.domain_weights.smoothing);
  write_pod<std::uint64_t>(out, state.iteration);
}

ModelState load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_model: cannot open " + path);
  char magic[8];
  read_raw(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError("load_model: not a model dump (bad magic)");
  if (read_pod<std::uint32_t>(in) != kVersion)
    throw DataError("load_model: unsupported version");
  if (read_pod<std::uint32_t>(in) != kOrderTag)
    throw DataError("load_model: byte order mismatch");

  ModelState state;
  state.extractor = read_stack(in);
  state.label_head = read_stack(in);
  state.domain_head = read_stack(in);
  state.proportion_logits = read_doubles(in);
  state.domain_weights.weights = SimplexVector::unchecked(read_doubles(in));
  state.domain_weights.smoothing = read_pod<double>(in);
  state.iteration = read_pod<std::uint64_t>(in);
  return state;
}

std::string metrics_csv_header(std::size_t num_classes, std::size_t num_sources) {
  std::ostringstream out;
  out << "iteration,label_loss,domain_loss,mean_match_loss,dist_match_loss";
  for (std::size_t l = 0; l < num_classes; ++l) out << ",prop_" << l;
  for (std::size_t s = 0; s < num_sources; ++s) out << ",domain_weight_" << s;
  out << ",target_accuracy";
  return out.str();
}

std::string metrics_csv_row(const MetricsRecord& record) {
  char buf[40];
  std::ostringstream out;
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    out << buf;
  };
  out << record.iteration << ",";
  num(record.label_loss);
  out << ",";
  num(record.domain_loss);
  out << ",";
  num(record.mean_match_loss);
  out << ",";
  num(record.dist_match_loss);
  for (double p : record.target_proportions) {
    out << ",";
    num(p);
  }
  for (double w : record.domain_weights) {
    out << ",";
    num(w);
  }
  out << ",";
  if (std::isfinite(record.target_accuracy)) num(record.target_accuracy);
  return out.str();
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& history) {
  std::ofstream out(path);
  if (!out) throw DataError("write_metrics_csv: cannot open " + path);
  if (history.empty()) {
    out << metrics_csv_header(0, 0) << "\n";
    return;
  }
  out << metrics_csv_header(history.front().target_proportions.size(),
                            history.front().domain_weights.size())
      << "\n";
  for (const MetricsRecord& r : history) out << metrics_csv_row(r) << "\n";
}

struct MetricsWriter::Impl {
  std::ofstream out;
};

MetricsWriter::MetricsWriter(const std::string& path, std::size_t num_classes,
                             std::size_t num_sources)
    : impl_(new Impl) {
  impl_->out.open(path);
  if (!impl_->out) {
    delete impl_;
    throw DataError("MetricsWriter: cannot open " + path);
  }
  impl_->out << metrics_csv_header(num_classes, num_sources) << "\n";
}

MetricsWriter::~MetricsWriter() { delete impl_; }

void MetricsWriter::append(const MetricsRecord& record) {
  impl_->out << metrics_csv_row(record) << "\n";
}

}  // namespace dats
