#pragma once

// The inference service: subscribes to images, classifies each one in
// delivery order and publishes a correlated result.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "meddds/clock.hpp"
#include "meddds/inference.hpp"
#include "meddds/participant.hpp"

namespace meddds::inference {

inline const pubsub::TopicDescription kImageTopic{"xray/images", "XrayImageSample"};
inline const pubsub::TopicDescription kResultTopic{"xray/results", "ClassificationResult"};

struct InferenceNodeOptions {
  wire::Reliability reliability = wire::Reliability::Reliable;
  std::size_t history_depth = 64;
  std::uint32_t heartbeat_period_ms = 50;
  // Classify on a worker thread so slow models and full histories never
  // stall the protocol context. Disable when driving a simulation by hand
  // and call flush() after each step instead.
  bool worker_thread = true;
};

class InferenceNode {
 public:
  using ResultHook = std::function<void(const samples::ClassificationResult&)>;

  InferenceNode(pubsub::Participant& participant, const Clock& clock, Classifier& classifier,
                InferenceNodeOptions options = {});
  ~InferenceNode();
  InferenceNode(const InferenceNode&) = delete;
  InferenceNode& operator=(const InferenceNode&) = delete;

  // Called after each result is published.
  void on_result(ResultHook hook);

  // Publishes queued results while the writer accepts them (inline mode).
  void flush();

  std::uint64_t processed() const { return processed_.load(); }
  std::uint64_t skipped() const { return skipped_.load(); }
  // Nothing waiting to be classified or published.
  bool idle() const;

  pubsub::Writer& writer() { return writer_; }
  pubsub::Reader& reader() { return reader_; }

 private:
  void on_image(Bytes payload);
  std::optional<samples::ClassificationResult> process(const Bytes& payload);
  void publish(const samples::ClassificationResult& r);
  void worker_loop();

  const Clock& clock_;
  Classifier& classifier_;
  InferenceNodeOptions options_;
  pubsub::Writer writer_;
  pubsub::Reader reader_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Bytes> inbox_;
  std::deque<samples::ClassificationResult> outbox_;
  bool busy_ = false;
  bool stopping_ = false;
  ResultHook hook_;
  std::atomic<std::uint64_t> processed_{0};
  std::atomic<std::uint64_t> skipped_{0};
  std::thread worker_;
};

}  // namespace meddds::inference
