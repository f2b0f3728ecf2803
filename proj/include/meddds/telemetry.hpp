#pragma once

// Round-trip latency pairs, windowed throughput and their CSV exports.
// Recorders are safe to feed from several threads.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "meddds/samples.hpp"

namespace meddds::telemetry {

using samples::SampleId;

enum class TelemetryErrc { EmptyInput, IoFailure };

class TelemetryError : public std::runtime_error {
 public:
  TelemetryError(TelemetryErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  TelemetryErrc code() const { return code_; }

 private:
  TelemetryErrc code_;
};

struct LatencyRecord {
  SampleId sample_id{};
  std::uint64_t t_publish_us = 0;
  std::uint64_t t_result_us = 0;

  std::uint64_t rtt_us() const { return t_result_us - t_publish_us; }
  bool operator==(const LatencyRecord&) const = default;
};

class LatencyRecorder {
 public:
  void record_publish(const SampleId& id, std::uint64_t t_us);
  // Unknown ids, repeated results and results stamped before their publish
  // are counted as orphans.
  std::optional<LatencyRecord> record_result(const SampleId& id, std::uint64_t t_us);

  std::vector<LatencyRecord> records() const;
  std::size_t pending() const;
  std::uint64_t orphans() const;

 private:
  mutable std::mutex mu_;
  std::map<SampleId, std::uint64_t> in_flight_;
  std::vector<LatencyRecord> done_;
  std::uint64_t orphans_ = 0;
};

struct LatencyStats {
  std::size_t count = 0;
  double mean_us = 0;
  std::uint64_t p50_us = 0;
  std::uint64_t p95_us = 0;
  std::uint64_t max_us = 0;
};

// Nearest-rank: the ceil(q*n)-th smallest.
std::uint64_t nearest_rank(std::vector<std::uint64_t> values, double q);
LatencyStats latency_stats(std::span<const std::uint64_t> rtts_us);
LatencyStats latency_stats(const std::vector<LatencyRecord>& records);

struct ThroughputEvent {
  std::uint64_t t_us = 0;
  std::uint64_t bytes = 0;
  std::uint64_t packets = 0;
};

struct ThroughputWindow {
  std::uint64_t window_start_us = 0;
  std::uint64_t window_len_us = 0;
  std::uint64_t bytes = 0;
  std::uint64_t packets = 0;

  double bytes_per_sec() const { return static_cast<double>(bytes) * 1e6 / static_cast<double>(window_len_us); }
  bool operator==(const ThroughputWindow&) const = default;
};

inline constexpr std::uint64_t kDefaultWindowUs = 1'000'000;

// Windows start at t0 (the earliest event unless given) and are contiguous;
// empty interior windows are emitted with zeros.
std::vector<ThroughputWindow> throughput_profile(std::vector<ThroughputEvent> events,
                                                 std::uint64_t window_len_us = kDefaultWindowUs,
                                                 std::optional<std::uint64_t> t0 = std::nullopt);

class ThroughputRecorder {
 public:
  void add(std::uint64_t t_us, std::uint64_t bytes, std::uint64_t packets = 0);
  std::vector<ThroughputEvent> events() const;
  std::uint64_t total_bytes() const;
  std::uint64_t total_packets() const;

 private:
  mutable std::mutex mu_;
  std::vector<ThroughputEvent> events_;
};

std::string latency_csv(std::vector<LatencyRecord> records);
std::string throughput_csv(const std::vector<ThroughputWindow>& windows);
void export_csv(const std::vector<LatencyRecord>& records, const std::filesystem::path& path);
void export_csv(const std::vector<ThroughputWindow>& windows, const std::filesystem::path& path);

}  // namespace meddds::telemetry
