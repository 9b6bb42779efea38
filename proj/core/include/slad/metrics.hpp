#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slad/common.hpp"

namespace slad {

/// One evaluation point of one model on one split. Serialized as a JSON
/// line; the metrics file holds only seed-deterministic fields so a repeated
/// run reproduces it byte for byte (wall-clock lives in a timing sidecar).
struct MetricsRecord {
  std::string run_id;
  std::size_t epoch = 0;
  std::string split;  // train | val | test
  std::string role;   // teacher | student
  double loss = 0.0;
  double accuracy = 0.0;
  std::uint64_t fwd_passes = 0;  // cumulative training-loop sample passes
  std::uint64_t bwd_passes = 0;
};

struct TimingRecord {
  std::string run_id;
  std::string phase;
  double seconds = 0.0;
};

std::string to_json_line(const MetricsRecord& r);
std::string to_json_line(const TimingRecord& r);

void append_line(const std::filesystem::path& path, const std::string& line);

/// Streaming-safe reload: a partially written final line is ignored; corrupt
/// interior lines raise IoError.
std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path);
std::vector<TimingRecord> load_timings(const std::filesystem::path& path);

/// Append sink shared by the training strategies. A null path keeps records
/// in memory only.
class MetricsSink {
 public:
  MetricsSink() = default;
  MetricsSink(std::filesystem::path metrics_path,
              std::filesystem::path timing_path);

  void record(const MetricsRecord& r);
  void timing(const std::string& run_id, const std::string& phase,
              double seconds);

  const std::vector<MetricsRecord>& records() const { return records_; }
  const std::vector<TimingRecord>& timings() const { return timings_; }

 private:
  std::optional<std::filesystem::path> metrics_path_, timing_path_;
  std::vector<MetricsRecord> records_;
  std::vector<TimingRecord> timings_;
};

}  // namespace slad
