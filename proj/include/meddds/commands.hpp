#pragma once

// The subcommands behind the `meddds` executable. Each returns a process
// exit code and writes user-facing output to `out`.

#include <atomic>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "meddds/evaluation.hpp"
#include "meddds/nodes.hpp"

namespace meddds::nodes {

enum ExitCode : int { kOk = 0, kUsageError = 1, kTimeout = 2, kPartial = 3 };

struct InferOptions {
  NodeConfig config;
  ClassifierChoice classifier;
};

// Runs until `stop` becomes true.
int cmd_infer(const InferOptions& opts, const std::atomic<bool>& stop, std::ostream& out);

struct SendOptions {
  NodeConfig config;
  ClassifierChoice classifier;  // simulator mode only
  std::vector<std::filesystem::path> images;
  std::chrono::milliseconds timeout{5'000};
  // Predictions CSV keyed by file stem.
  std::optional<std::filesystem::path> pred_out;
};

int cmd_send(const SendOptions& opts, std::ostream& out);

struct BenchOptions {
  NodeConfig config;
  ClassifierChoice classifier;
  std::size_t count = 10;
  double rate_per_sec = 20.0;  // <= 0 sends back to back
  std::uint32_t size = 128;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = ".";
  std::chrono::milliseconds timeout{5'000};
};

struct BenchReport {
  std::size_t sent = 0;
  std::size_t completed = 0;
  std::size_t timeouts = 0;  // published, never answered
  std::size_t orphans = 0;   // answers with no matching publish
  std::vector<telemetry::LatencyRecord> records;
  std::vector<telemetry::ThroughputWindow> windows;
  std::uint64_t payload_bytes = 0;
  PacketCounts packets;
  std::uint64_t image_payload_size = 0;
  int exit_code = kOk;
};

BenchReport run_bench(const BenchOptions& opts, std::ostream& out);
int cmd_bench(const BenchOptions& opts, std::ostream& out);

struct SplitOptions {
  std::filesystem::path manifest;
  eval::SplitSpec spec;
  std::filesystem::path out_dir = ".";
};

int cmd_split(const SplitOptions& opts, std::ostream& out);

struct EvalOptions {
  std::filesystem::path truth;
  std::filesystem::path pred;
  // Confusion matrix CSV.
  std::optional<std::filesystem::path> out;
};

int cmd_eval(const EvalOptions& opts, std::ostream& out);

}  // namespace meddds::nodes
