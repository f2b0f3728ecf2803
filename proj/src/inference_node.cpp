#include "meddds/inference_node.hpp"

#include <chrono>

#include <spdlog/spdlog.h>

namespace meddds::inference {

InferenceNode::InferenceNode(pubsub::Participant& participant, const Clock& clock, Classifier& classifier,
                             InferenceNodeOptions options)
    : clock_(clock), classifier_(classifier), options_(options) {
  const pubsub::QoS qos{options_.reliability, options_.history_depth, options_.heartbeat_period_ms};
  writer_ = participant.create_writer(kResultTopic, qos);
  if (options_.worker_thread) worker_ = std::thread([this] { worker_loop(); });
  reader_ = participant.create_reader(kImageTopic, qos,
                                      [this](const pubsub::SampleInfo&, Bytes payload) { on_image(std::move(payload)); });
}

InferenceNode::~InferenceNode() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void InferenceNode::on_result(ResultHook hook) {
  std::lock_guard lock(mu_);
  hook_ = std::move(hook);
}

bool InferenceNode::idle() const {
  std::lock_guard lock(mu_);
  return inbox_.empty() && outbox_.empty() && !busy_;
}

void InferenceNode::on_image(Bytes payload) {
  if (options_.worker_thread) {
    {
      std::lock_guard lock(mu_);
      inbox_.push_back(std::move(payload));
    }
    cv_.notify_one();
    return;
  }
  if (auto r = process(payload)) {
    std::lock_guard lock(mu_);
    outbox_.push_back(*r);
  }
  flush();
}

std::optional<samples::ClassificationResult> InferenceNode::process(const Bytes& payload) {
  samples::XrayImageSample image;
  try {
    image = samples::decode_image(payload);
  } catch (const samples::SampleError& e) {
    ++skipped_;
    spdlog::warn("skipping undecodable image payload ({} bytes): {}", payload.size(), e.what());
    return std::nullopt;
  }
  try {
    const auto start = std::chrono::steady_clock::now();
    const samples::Confidences c = classifier_.classify(image);
    const auto elapsed = std::chrono::steady_clock::now() - start;
    samples::ClassificationResult r;
    r.sample_id = image.sample_id;
    r.confidences = c;
    r.label = samples::argmax_label(c);
    r.inference_duration_us =
        static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(elapsed).count());
    r.result_timestamp_us = clock_.now_us();
    samples::validate(r);
    ++processed_;
    spdlog::info("sample {} label={} confidence={:.4f} inference_us={}", samples::to_hex(r.sample_id),
                 samples::label_name(r.label), r.confidences[static_cast<std::size_t>(r.label)],
                 r.inference_duration_us);
    return r;
  } catch (const std::exception& e) {
    ++skipped_;
    spdlog::warn("skipping sample {}: {}", samples::to_hex(image.sample_id), e.what());
    return std::nullopt;
  }
}

void InferenceNode::publish(const samples::ClassificationResult& r) {
  writer_.write(samples::encode_sample(r));
  ResultHook hook;
  {
    std::lock_guard lock(mu_);
    hook = hook_;
  }
  if (hook) hook(r);
}

void InferenceNode::flush() {
  for (;;) {
    samples::ClassificationResult r;
    {
      std::lock_guard lock(mu_);
      if (outbox_.empty() || !writer_.can_write()) return;
      r = outbox_.front();
      outbox_.pop_front();
    }
    publish(r);
  }
}

void InferenceNode::worker_loop() {
  std::unique_lock lock(mu_);
  for (;;) {
    cv_.wait(lock, [&] { return stopping_ || !inbox_.empty(); });
    if (stopping_) return;
    Bytes payload = std::move(inbox_.front());
    inbox_.pop_front();
    busy_ = true;
    lock.unlock();
    if (auto r = process(payload)) {
      // write() blocks while the history is full of unacknowledged results.
      for (;;) {
        try {
          publish(*r);
          break;
        } catch (const pubsub::PubSubError& e) {
          if (e.code() != pubsub::PubSubErrc::HistoryFull) {
            spdlog::error("dropping result for {}: {}", samples::to_hex(r->sample_id), e.what());
            break;
          }
          spdlog::warn("result writer still full; retrying");
          std::lock_guard check(mu_);
          if (stopping_) break;
        }
      }
    }
    lock.lock();
    busy_ = false;
  }
}

}  // namespace meddds::inference
