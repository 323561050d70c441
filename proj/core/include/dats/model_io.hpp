#pragma once

#include <string>
#include <vector>

#include "dats/trainer.hpp"

namespace dats {

// Flat little-endian binary dump with a versioned header. Layout:
//   magic "DATSMDL\0", u32 version, u32 byte-order tag, then the three layer
//   stacks, the proportion logits, the smoothed domain weights, and the
//   iteration counter.
void save_model(const std::string& path, const ModelState& state);
ModelState load_model(const std::string& path);

// One CSV row per iteration; accuracy cells are blank when not evaluated.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& history);

// Streaming variant used by the CLI.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, std::size_t num_classes, std::size_t num_sources);
  ~MetricsWriter();
  void append(const MetricsRecord& record);

 private:
  struct Impl;
  Impl* impl_;
};

std::string metrics_csv_header(std::size_t num_classes, std::size_t num_sources);
std::string metrics_csv_row(const MetricsRecord& record);

}  // namespace dats
