#pragma once

// Doctor-side node and the plumbing shared by the command-line front-ends.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>

#include "meddds/inference_node.hpp"
#include "meddds/sim_transport.hpp"
#include "meddds/telemetry.hpp"
#include "meddds/udp_transport.hpp"

namespace meddds::nodes {

using inference::kImageTopic;
using inference::kResultTopic;

struct NodeConfig {
  transport::Locator discovery_group = transport::kDefaultDiscoveryGroup;
  std::uint16_t port = 0;  // 0 picks any free port
  wire::Reliability reliability = wire::Reliability::Reliable;
  std::size_t frag_size = wire::kDefaultFragSize;
  std::size_t history_depth = 64;
  std::uint32_t heartbeat_period_ms = 50;
  std::uint32_t announce_period_ms = 1'000;
  std::uint32_t lease_duration_ms = 10'000;
  // Set: run both nodes in this process over the simulated network.
  std::optional<transport::FaultProfile> simulated;

  void validate() const;
  pubsub::ParticipantConfig participant_config(std::string name) const;
  pubsub::QoS qos() const;
};

struct ClassifierChoice {
  std::optional<std::string> adapter;  // builtin model when empty
  std::chrono::milliseconds adapter_timeout = inference::ExternalAdapter::kDefaultTimeout;
};

std::unique_ptr<inference::Classifier> make_classifier(const ClassifierChoice& choice);

// Counts datagrams crossing the doctor's transport, split by whether they
// carry sample data (DATA / DATA_FRAG) or protocol overhead.
struct PacketCounts {
  std::uint64_t data = 0;
  std::uint64_t overhead = 0;
  std::uint64_t total() const { return data + overhead; }
};

class DoctorNode {
 public:
  DoctorNode(pubsub::Participant& participant, const Clock& clock, const NodeConfig& config,
             telemetry::ThroughputRecorder& traffic);

  // Both directions matched with at least one inference node.
  bool wait_matched(std::chrono::milliseconds timeout);

  // Stamps the publish time, records it and writes the image.
  samples::SampleId publish(samples::XrayImageSample image);

  std::optional<samples::ClassificationResult> wait_result(const samples::SampleId& id,
                                                           std::chrono::milliseconds timeout);
  // Waits until `n` results arrived in total.
  bool wait_results(std::size_t n, std::chrono::milliseconds timeout);
  std::size_t results_received() const;

  telemetry::LatencyRecorder& latency() { return latency_; }

 private:
  void on_result(Bytes payload);

  const Clock& clock_;
  telemetry::ThroughputRecorder& traffic_;
  telemetry::LatencyRecorder latency_;
  pubsub::Writer images_;
  pubsub::Reader results_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<samples::SampleId, std::size_t> image_bytes_;
  std::map<samples::SampleId, samples::ClassificationResult> results_by_id_;
  std::size_t received_ = 0;
};

// Owns the doctor's transport and participant. In simulator mode it also
// hosts a complete inference node on the same in-process network.
class DoctorSession {
 public:
  DoctorSession(const NodeConfig& config, const ClassifierChoice& classifier);
  ~DoctorSession();
  DoctorSession(const DoctorSession&) = delete;
  DoctorSession& operator=(const DoctorSession&) = delete;

  DoctorNode& doctor() { return *doctor_; }
  // The doctor matched an inference node; in simulator mode also the
  // reverse direction, so the first sample is not sent into a half-open
  // match.
  bool wait_ready(std::chrono::milliseconds timeout);
  const Clock& clock() const { return clock_; }
  telemetry::ThroughputRecorder& traffic() { return traffic_; }
  PacketCounts packets() const { return {data_packets_.load(), overhead_packets_.load()}; }
  pubsub::ParticipantStats stats() const { return doctor_participant_->stats(); }
  // Stops the protocol threads; recorders stay readable.
  void stop();

 private:
  const Clock& clock_;
  telemetry::ThroughputRecorder traffic_;
  std::atomic<std::uint64_t> data_packets_{0};
  std::atomic<std::uint64_t> overhead_packets_{0};

  std::unique_ptr<transport::SimNetwork> net_;
  std::unique_ptr<transport::Transport> doctor_transport_;
  std::unique_ptr<transport::Transport> infer_transport_;
  std::unique_ptr<transport::TapTransport> tap_;
  std::unique_ptr<inference::Classifier> classifier_;
  std::unique_ptr<pubsub::Participant> doctor_participant_;
  std::unique_ptr<pubsub::Participant> infer_participant_;
  std::unique_ptr<inference::InferenceNode> infer_node_;
  std::unique_ptr<DoctorNode> doctor_;
};

// Deterministic square test images.
samples::XrayImageSample random_image(std::uint32_t size, std::mt19937_64& rng);
// Noisy dark image whose quadrant `cls` is bright.
samples::XrayImageSample separable_image(std::uint32_t size, samples::Label cls, std::mt19937_64& rng);

struct Corpus {
  std::vector<std::filesystem::path> images;
  std::filesystem::path truth_csv;     // file stem,label
  std::filesystem::path manifest_csv;  // path,label
};

// `per_class` separable images of each class as PGM files under `dir`.
Corpus write_corpus(const std::filesystem::path& dir, std::size_t per_class, std::uint32_t size, std::uint64_t seed);

}  // namespace meddds::nodes
