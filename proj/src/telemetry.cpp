#include "meddds/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

#include <fmt/format.h>

namespace meddds::telemetry {

void LatencyRecorder::record_publish(const SampleId& id, std::uint64_t t_us) {
  std::lock_guard lock(mu_);
  in_flight_[id] = t_us;
}

std::optional<LatencyRecord> LatencyRecorder::record_result(const SampleId& id, std::uint64_t t_us) {
  std::lock_guard lock(mu_);
  auto it = in_flight_.find(id);
  if (it == in_flight_.end() || t_us < it->second) {
    ++orphans_;
    return std::nullopt;
  }
  LatencyRecord r{id, it->second, t_us};
  in_flight_.erase(it);
  done_.push_back(r);
  return r;
}

std::vector<LatencyRecord> LatencyRecorder::records() const {
  std::lock_guard lock(mu_);
  return done_;
}

std::size_t LatencyRecorder::pending() const {
  std::lock_guard lock(mu_);
  return in_flight_.size();
}

std::uint64_t LatencyRecorder::orphans() const {
  std::lock_guard lock(mu_);
  return orphans_;
}

std::uint64_t nearest_rank(std::vector<std::uint64_t> values, double q) {
  if (values.empty()) throw TelemetryError(TelemetryErrc::EmptyInput, "no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  // Guard against q*n landing a hair above an integer.
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

LatencyStats latency_stats(std::span<const std::uint64_t> rtts_us) {
  if (rtts_us.empty()) throw TelemetryError(TelemetryErrc::EmptyInput, "no latency records");
  std::vector<std::uint64_t> v(rtts_us.begin(), rtts_us.end());
  LatencyStats s;
  s.count = v.size();
  long double sum = 0;
  for (auto x : v) sum += x;
  s.mean_us = static_cast<double>(sum / v.size());
  s.p50_us = nearest_rank(v, 0.5);
  s.p95_us = nearest_rank(v, 0.95);
  s.max_us = *std::max_element(v.begin(), v.end());
  return s;
}

LatencyStats latency_stats(const std::vector<LatencyRecord>& records) {
  std::vector<std::uint64_t> rtts;
  rtts.reserve(records.size());
  for (const auto& r : records) rtts.push_back(r.rtt_us());
  return latency_stats(rtts);
}

std::vector<ThroughputWindow> throughput_profile(std::vector<ThroughputEvent> events, std::uint64_t window_len_us,
                                                 std::optional<std::uint64_t> t0) {
  if (window_len_us == 0) throw std::invalid_argument("window length must be positive");
  std::vector<ThroughputWindow> out;
  if (events.empty()) return out;
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.t_us < b.t_us; });
  const std::uint64_t start = t0 ? std::min(*t0, events.front().t_us) : events.front().t_us;
  const std::uint64_t last = (events.back().t_us - start) / window_len_us;
  out.resize(last + 1);
  for (std::uint64_t k = 0; k <= last; ++k) out[k] = ThroughputWindow{start + k * window_len_us, window_len_us, 0, 0};
  for (const auto& e : events) {
    auto& w = out[(e.t_us - start) / window_len_us];
    w.bytes += e.bytes;
    w.packets += e.packets;
  }
  return out;
}

void ThroughputRecorder::add(std::uint64_t t_us, std::uint64_t bytes, std::uint64_t packets) {
  std::lock_guard lock(mu_);
  events_.push_back({t_us, bytes, packets});
}

std::vector<ThroughputEvent> ThroughputRecorder::events() const {
  std::lock_guard lock(mu_);
  return events_;
}

std::uint64_t ThroughputRecorder::total_bytes() const {
  std::lock_guard lock(mu_);
  std::uint64_t n = 0;
  for (const auto& e : events_) n += e.bytes;
  return n;
}

std::uint64_t ThroughputRecorder::total_packets() const {
  std::lock_guard lock(mu_);
  std::uint64_t n = 0;
  for (const auto& e : events_) n += e.packets;
  return n;
}

std::string latency_csv(std::vector<LatencyRecord> records) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.t_publish_us, a.sample_id) < std::tie(b.t_publish_us, b.sample_id);
  });
  std::string out = "sample_id,t_publish_us,t_result_us,rtt_us\n";
  for (const auto& r : records)
    out += fmt::format("{},{},{},{}\n", samples::to_hex(r.sample_id), r.t_publish_us, r.t_result_us, r.rtt_us());
  return out;
}

std::string throughput_csv(const std::vector<ThroughputWindow>& windows) {
  std::string out = "window_start_us,bytes,packets,bytes_per_sec\n";
  for (const auto& w : windows)
    out += fmt::format("{},{},{},{}\n", w.window_start_us, w.bytes, w.packets, w.bytes_per_sec());
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.empty()) throw TelemetryError(TelemetryErrc::IoFailure, "empty output path");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TelemetryError(TelemetryErrc::IoFailure, fmt::format("cannot create {}", path.string()));
  out << text;
  out.close();
  if (!out) throw TelemetryError(TelemetryErrc::IoFailure, fmt::format("cannot write {}", path.string()));
}

}  // namespace

void export_csv(const std::vector<LatencyRecord>& records, const std::filesystem::path& path) {
  write_file(path, latency_csv(records));
}

void export_csv(const std::vector<ThroughputWindow>& windows, const std::filesystem::path& path) {
  write_file(path, throughput_csv(windows));
}

}  // namespace meddds::telemetry
