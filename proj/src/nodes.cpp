#include "meddds/nodes.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "meddds/evaluation.hpp"

namespace meddds::nodes {

void NodeConfig::validate() const {
  if (frag_size < 64 || frag_size > 65'000) throw std::invalid_argument("frag_size must be in [64, 65000]");
  if (heartbeat_period_ms == 0 || announce_period_ms == 0 || lease_duration_ms == 0)
    throw std::invalid_argument("periods must be positive");
  if (history_depth == 0) throw std::invalid_argument("history depth must be positive");
  if (!discovery_group.is_multicast()) throw std::invalid_argument("discovery group must be a multicast address");
  if (simulated) simulated->validate();
}

pubsub::ParticipantConfig NodeConfig::participant_config(std::string name) const {
  pubsub::ParticipantConfig c;
  c.announce_period_ms = announce_period_ms;
  c.lease_duration_ms = lease_duration_ms;
  c.discovery_group = discovery_group;
  c.frag_size = frag_size;
  c.name = std::move(name);
  return c;
}

pubsub::QoS NodeConfig::qos() const { return pubsub::QoS{reliability, history_depth, heartbeat_period_ms}; }

std::unique_ptr<inference::Classifier> make_classifier(const ClassifierChoice& choice) {
  if (choice.adapter) return std::make_unique<inference::ExternalAdapter>(*choice.adapter, choice.adapter_timeout);
  return std::make_unique<inference::QuadrantLinearModel>();
}

// ---------------------------------------------------------------------------

DoctorNode::DoctorNode(pubsub::Participant& participant, const Clock& clock, const NodeConfig& config,
                       telemetry::ThroughputRecorder& traffic)
    : clock_(clock), traffic_(traffic) {
  images_ = participant.create_writer(kImageTopic, config.qos());
  results_ = participant.create_reader(kResultTopic, config.qos(),
                                       [this](const pubsub::SampleInfo&, Bytes b) { on_result(std::move(b)); });
}

bool DoctorNode::wait_matched(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  if (!images_.wait_for_matched(1, timeout)) return false;
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return results_.wait_for_matched(1, std::max(left, std::chrono::milliseconds(0)));
}

samples::SampleId DoctorNode::publish(samples::XrayImageSample image) {
  image.publish_timestamp_us = clock_.now_us();
  const Bytes payload = samples::encode_sample(image);
  {
    std::lock_guard lock(mu_);
    image_bytes_[image.sample_id] = payload.size();
  }
  latency_.record_publish(image.sample_id, image.publish_timestamp_us);
  images_.write(payload);
  return image.sample_id;
}

void DoctorNode::on_result(Bytes payload) {
  const std::uint64_t now = clock_.now_us();
  samples::ClassificationResult r;
  try {
    r = samples::decode_result(payload);
  } catch (const samples::SampleError& e) {
    spdlog::warn("ignoring malformed result: {}", e.what());
    return;
  }
  const auto rec = latency_.record_result(r.sample_id, now);
  {
    std::lock_guard lock(mu_);
    if (rec) {
      // Both legs of a completed exchange were delivered.
      traffic_.add(rec->t_publish_us, image_bytes_[r.sample_id]);
      traffic_.add(now, payload.size());
      image_bytes_.erase(r.sample_id);
    }
    results_by_id_[r.sample_id] = r;
    ++received_;
  }
  cv_.notify_all();
}

std::optional<samples::ClassificationResult> DoctorNode::wait_result(const samples::SampleId& id,
                                                                     std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, timeout, [&] { return results_by_id_.contains(id); })) return std::nullopt;
  return results_by_id_.at(id);
}

bool DoctorNode::wait_results(std::size_t n, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return received_ >= n; });
}

std::size_t DoctorNode::results_received() const {
  std::lock_guard lock(mu_);
  return received_;
}

// ---------------------------------------------------------------------------

DoctorSession::DoctorSession(const NodeConfig& config, const ClassifierChoice& classifier)
    : clock_(WallClock::instance()) {
  config.validate();
  if (config.simulated) {
    net_ = std::make_unique<transport::SimNetwork>(clock_, *config.simulated);
    doctor_transport_ = net_->create_endpoint();
    infer_transport_ = net_->create_endpoint();
  } else {
    transport::UdpTransport::Options o;
    o.port = config.port;
    doctor_transport_ = std::make_unique<transport::UdpTransport>(o);
  }
  tap_ = std::make_unique<transport::TapTransport>(
      *doctor_transport_, [this](transport::Direction, const transport::Locator&, ByteView bytes) {
        const bool data = bytes.size() > wire::kHeaderSize &&
                          (bytes[wire::kHeaderSize] == static_cast<std::uint8_t>(wire::SubmessageKind::Data) ||
                           bytes[wire::kHeaderSize] == static_cast<std::uint8_t>(wire::SubmessageKind::DataFrag));
        ++(data ? data_packets_ : overhead_packets_);
        traffic_.add(clock_.now_us(), 0, 1);
      });
  doctor_participant_ = std::make_unique<pubsub::Participant>(*tap_, clock_, config.participant_config("doctor"));

  if (config.simulated) {
    classifier_ = make_classifier(classifier);
    infer_participant_ =
        std::make_unique<pubsub::Participant>(*infer_transport_, clock_, config.participant_config("inference"));
    inference::InferenceNodeOptions opts;
    opts.reliability = config.reliability;
    opts.history_depth = config.history_depth;
    opts.heartbeat_period_ms = config.heartbeat_period_ms;
    infer_node_ = std::make_unique<inference::InferenceNode>(*infer_participant_, clock_, *classifier_, opts);
    infer_participant_->start();
  }
  doctor_ = std::make_unique<DoctorNode>(*doctor_participant_, clock_, config, traffic_);
  doctor_participant_->start();
}

DoctorSession::~DoctorSession() { stop(); }

bool DoctorSession::wait_ready(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  if (!doctor_->wait_matched(timeout)) return false;
  if (!infer_node_) return true;
  const auto left = [&] {
    return std::max(std::chrono::milliseconds(0), std::chrono::duration_cast<std::chrono::milliseconds>(
                                                      deadline - std::chrono::steady_clock::now()));
  };
  return infer_node_->reader().wait_for_matched(1, left()) && infer_node_->writer().wait_for_matched(1, left());
}

void DoctorSession::stop() {
  if (doctor_participant_) doctor_participant_->stop();
  if (infer_participant_) infer_participant_->stop();
}

// ---------------------------------------------------------------------------

samples::XrayImageSample random_image(std::uint32_t size, std::mt19937_64& rng) {
  samples::XrayImageSample s;
  s.sample_id = samples::random_sample_id();
  s.width = size;
  s.height = size;
  s.pixels.resize(std::size_t{size} * size);
  for (auto& p : s.pixels) p = static_cast<std::uint8_t>(rng() >> 56);
  return s;
}

samples::XrayImageSample separable_image(std::uint32_t size, samples::Label cls, std::mt19937_64& rng) {
  samples::XrayImageSample s;
  s.sample_id = samples::random_sample_id();
  s.width = size;
  s.height = size;
  s.pixels.resize(std::size_t{size} * size);
  const int q = static_cast<int>(cls);
  const std::uint32_t half = size / 2;
  for (std::uint32_t y = 0; y < size; ++y) {
    for (std::uint32_t x = 0; x < size; ++x) {
      const int qq = (y >= half ? 2 : 0) + (x >= half ? 1 : 0);
      const auto noise = static_cast<std::uint8_t>(rng() % 40);
      s.pixels[std::size_t{y} * size + x] = qq == q ? static_cast<std::uint8_t>(215 + noise) : noise;
    }
  }
  return s;
}

Corpus write_corpus(const std::filesystem::path& dir, std::size_t per_class, std::uint32_t size, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(seed);
  Corpus c;
  eval::LabelTable truth;
  eval::Manifest manifest;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (unsigned k = 0; k < samples::kNumClasses; ++k) {
      const auto label = *samples::label_from_index(k);
      const std::string stem = fmt::format("img_{:05}", i * samples::kNumClasses + k);
      const auto path = dir / (stem + ".pgm");
      samples::save_pgm(separable_image(size, label, rng), path);
      c.images.push_back(path);
      truth.emplace_back(stem, label);
      manifest.push_back({path.string(), label});
    }
  }
  c.truth_csv = dir / "truth.csv";
  c.manifest_csv = dir / "manifest.csv";
  eval::write_label_csv(truth, c.truth_csv);
  eval::write_manifest(manifest, c.manifest_csv);
  return c;
}

}  // namespace meddds::nodes
