#include "slad/metrics.hpp"

#include <fstream>

#include <json.hpp>

namespace slad {

using nlohmann::json;

std::string to_json_line(const MetricsRecord& r) {
  json j{{"run", r.run_id},      {"epoch", r.epoch},
         {"split", r.split},     {"role", r.role},
         {"loss", r.loss},       {"acc", r.accuracy},
         {"fwd", r.fwd_passes},  {"bwd", r.bwd_passes}};
  return j.dump();
}

std::string to_json_line(const TimingRecord& r) {
  json j{{"run", r.run_id}, {"phase", r.phase}, {"seconds", r.seconds}};
  return j.dump();
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream os(path, std::ios::app);
  if (!os) throw IoError("metrics: cannot append to " + path.string());
  os << line << '\n';
  os.flush();
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path,
                                    bool& last_complete) {
  std::ifstream is(path);
  if (!is) throw IoError("metrics: cannot read " + path.string());
  std::string content((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());
  last_complete = content.empty() || content.back() == '\n';
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t nl = content.find('\n', start);
    if (nl == std::string::npos) {
      lines.push_back(content.substr(start));
      break;
    }
    lines.push_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

template <typename T, typename ParseFn>
std::vector<T> load_records(const std::filesystem::path& path,
                            ParseFn parse) {
  bool last_complete = true;
  std::vector<std::string> lines = read_lines(path, last_complete);
  std::vector<T> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    bool is_last = i + 1 == lines.size();
    try {
      out.push_back(parse(json::parse(lines[i])));
    } catch (const json::exception& e) {
      if (is_last && !last_complete) break;  // torn final line
      throw IoError("metrics: corrupt record at line " + std::to_string(i + 1) +
                    " of " + path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<MetricsRecord> load_metrics(const std::filesystem::path& path) {
  return load_records<MetricsRecord>(path, [](const json& j) {
    MetricsRecord r;
    r.run_id = j.at("run").get<std::string>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.split = j.at("split").get<std::string>();
    r.role = j.at("role").get<std::string>();
    r.loss = j.at("loss").get<double>();
    r.accuracy = j.at("acc").get<double>();
    r.fwd_passes = j.at("fwd").get<std::uint64_t>();
    r.bwd_passes = j.at("bwd").get<std::uint64_t>();
    return r;
  });
}

std::vector<TimingRecord> load_timings(const std::filesystem::path& path) {
  return load_records<TimingRecord>(path, [](const json& j) {
    TimingRecord r;
    r.run_id = j.at("run").get<std::string>();
    r.phase = j.at("phase").get<std::string>();
    r.seconds = j.at("seconds").get<double>();
    return r;
  });
}

MetricsSink::MetricsSink(std::filesystem::path metrics_path,
                         std::filesystem::path timing_path)
    : metrics_path_(std::move(metrics_path)),
      timing_path_(std::move(timing_path)) {}

void MetricsSink::record(const MetricsRecord& r) {
  records_.push_back(r);
  if (metrics_path_) append_line(*metrics_path_, to_json_line(r));
}

void MetricsSink::timing(const std::string& run_id, const std::string& phase,
                         double seconds) {
  TimingRecord t{run_id, phase, seconds};
  timings_.push_back(t);
  if (timing_path_) append_line(*timing_path_, to_json_line(t));
}

}  // namespace slad
