#include "meddds/participant.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace meddds::pubsub {

using namespace std::chrono_literals;
using transport::Locator;

namespace {

constexpr std::uint32_t kMaxLoopWaitMs = 20;

bool same_topic(const TopicDescription& t, const wire::EndpointInfo& e) {
  return t.name == e.topic_name && t.type == e.type_name;
}

}  // namespace

void ParticipantConfig::validate() const {
  if (announce_period_ms == 0) throw std::invalid_argument("announce_period_ms must be positive");
  if (lease_duration_ms == 0) throw std::invalid_argument("lease_duration_ms must be positive");
  if (frag_size == 0 || frag_size > 65'000) throw std::invalid_argument("frag_size must be in [1, 65000]");
  if (!discovery_group.is_multicast()) throw std::invalid_argument("discovery group must be a multicast address");
}

// ---------------------------------------------------------------------------
// Handles

SequenceNumber Writer::write(ByteView payload) { return participant_->write(id_, payload); }

bool Writer::can_write() const {
  std::lock_guard lock(participant_->mu_);
  return participant_->can_write_locked(participant_->writers_.at(id_));
}

std::size_t Writer::matched_readers() const { return participant_->matched_readers(id_); }

bool Writer::all_acknowledged() const { return participant_->all_acknowledged(id_); }

bool Writer::wait_for_matched(std::size_t n, std::chrono::milliseconds timeout) const {
  return participant_->wait_for([this, n] { return participant_->writers_.at(id_).readers.size() >= n; }, timeout);
}

Guid Writer::guid() const { return Guid{participant_->prefix_, id_}; }

std::size_t Reader::matched_writers() const { return participant_->matched_writers(id_); }

bool Reader::wait_for_matched(std::size_t n, std::chrono::milliseconds timeout) const {
  return participant_->wait_for([this, n] { return participant_->readers_.at(id_).writers.size() >= n; }, timeout);
}

Guid Reader::guid() const { return Guid{participant_->prefix_, id_}; }

// ---------------------------------------------------------------------------
// Lifecycle

Participant::Participant(transport::Transport& transport, const Clock& clock, ParticipantConfig config)
    : transport_(transport), clock_(clock), config_(std::move(config)) {
  config_.validate();
  if (config_.guid_seed) {
    std::mt19937_64 rng(*config_.guid_seed);
    prefix_ = wire::GuidPrefix::random(rng);
  } else {
    prefix_ = wire::GuidPrefix::random();
  }
  transport_.join_discovery_group(config_.discovery_group);
  next_announce_us_ = clock_.now_us();
  spdlog::debug("{}: participant {} on {}", config_.name, prefix_.to_string(), transport_.local_locator().to_string());
}

Participant::~Participant() { stop(); }

void Participant::start() {
  if (running_.exchange(true)) return;
  stop_requested_ = false;
  thread_ = std::thread([this] {
    while (!stop_requested_.load()) {
      const std::uint64_t now = clock_.now_us();
      const std::uint64_t deadline = next_deadline_us();
      const std::uint64_t wait_ms =
          std::min<std::uint64_t>(deadline > now ? (deadline - now + 999) / 1000 : 0, kMaxLoopWaitMs);
      if (auto d = transport_.receive(std::chrono::milliseconds(wait_ms))) {
        handle_datagram(*d);
        while (auto more = transport_.receive(0ms)) handle_datagram(*more);
      }
      handle_timers();
      dispatch();
    }
  });
}

void Participant::stop() {
  if (!running_.load()) return;
  stop_requested_ = true;
  transport_.interrupt();
  if (thread_.joinable()) thread_.join();
  running_ = false;
  state_cv_.notify_all();
}

void Participant::pump() {
  while (auto d = transport_.receive(0ms)) handle_datagram(*d);
  handle_timers();
  dispatch();
}

void Participant::set_announcing(bool on) {
  std::lock_guard lock(mu_);
  announcing_ = on;
  if (on) next_announce_us_ = clock_.now_us();
}

// ---------------------------------------------------------------------------
// Endpoints

EntityId Participant::allocate_entity_id() {
  const EntityId id = next_entity_id_++;
  if (id == wire::kEntityIdUnknown || id == wire::kEntityIdParticipant || writers_.contains(id) ||
      readers_.contains(id))
    throw PubSubError(PubSubErrc::DuplicateEntity, fmt::format("entity id {} already in use", id));
  return id;
}

void Participant::check_topic(const TopicDescription& topic) const {
  if (topic.name.size() > wire::kMaxNameLength || topic.type.size() > wire::kMaxNameLength)
    throw PubSubError(PubSubErrc::NameTooLong, "topic and type names are limited to 256 bytes");
  if (topic.name.empty()) throw std::invalid_argument("topic name must not be empty");
}

Writer Participant::create_writer(const TopicDescription& topic, const QoS& qos) {
  check_topic(topic);
  qos.validate();
  std::lock_guard lock(mu_);
  const EntityId id = allocate_entity_id();
  auto& w = writers_.emplace(id, LocalWriter{id, topic, qos, WriterHistory(qos.history_depth), {}, std::nullopt})
                .first->second;
  match_local_writer(w);
  next_announce_us_ = clock_.now_us();
  state_cv_.notify_all();
  return Writer(this, id);
}

Reader Participant::create_reader(const TopicDescription& topic, const QoS& qos, DataCallback on_data) {
  check_topic(topic);
  qos.validate();
  std::lock_guard lock(mu_);
  const EntityId id = allocate_entity_id();
  auto& r = readers_.emplace(id, LocalReader{id, topic, qos, std::move(on_data), {}}).first->second;
  match_local_reader(r);
  next_announce_us_ = clock_.now_us();
  state_cv_.notify_all();
  return Reader(this, id);
}

bool Participant::can_write_locked(const LocalWriter& w) const {
  if (w.qos.reliability != Reliability::Reliable || !w.history.full()) return true;
  const SequenceNumber oldest = w.history.first_seq();
  return std::all_of(w.readers.begin(), w.readers.end(), [&](const auto& kv) {
    return kv.second.reliability != Reliability::Reliable || kv.second.proxy.acknowledged(oldest);
  });
}

bool Participant::has_unacked_locked(const LocalWriter& w) const {
  const SequenceNumber last = w.history.last_seq();
  return std::any_of(w.readers.begin(), w.readers.end(), [&](const auto& kv) {
    return kv.second.reliability == Reliability::Reliable && !kv.second.proxy.acknowledged(last) && last >= 1;
  });
}

SequenceNumber Participant::write(EntityId id, ByteView payload) {
  if (payload.empty()) throw PubSubError(PubSubErrc::EmptyPayload, "payload must not be empty");
  std::unique_lock lock(mu_);
  auto it = writers_.find(id);
  if (it == writers_.end()) throw PubSubError(PubSubErrc::UnknownEntity, "unknown writer");
  LocalWriter& w = it->second;

  if (!can_write_locked(w)) {
    const bool on_protocol_thread = thread_.get_id() == std::this_thread::get_id();
    if (config_.block_when_full && running_.load() && !on_protocol_thread) {
      state_cv_.wait_for(lock, std::chrono::milliseconds(config_.max_blocking_ms),
                         [&] { return can_write_locked(w) || !running_.load(); });
    }
    if (!can_write_locked(w))
      throw PubSubError(PubSubErrc::HistoryFull,
                        fmt::format("writer {} history full of unacknowledged samples", Guid{prefix_, id}.to_string()));
  }

  const SequenceNumber seq = w.history.add(Bytes(payload.begin(), payload.end()));
  const Bytes& stored = *w.history.find(seq);
  for (const Locator& loc : reader_locators(w, false)) send_sample(w, seq, stored, loc, false);
  if (w.qos.reliability == Reliability::Reliable && has_unacked_locked(w)) {
    const bool had_timer = w.next_heartbeat_us.has_value();
    schedule_heartbeat(w);
    if (!had_timer && running_.load() && thread_.get_id() != std::this_thread::get_id()) transport_.interrupt();
  }
  return seq;
}

std::size_t Participant::matched_readers(EntityId writer) const {
  std::lock_guard lock(mu_);
  return writers_.at(writer).readers.size();
}

std::size_t Participant::matched_writers(EntityId reader) const {
  std::lock_guard lock(mu_);
  return readers_.at(reader).writers.size();
}

bool Participant::all_acknowledged(EntityId writer) const {
  std::lock_guard lock(mu_);
  return !has_unacked_locked(writers_.at(writer));
}

bool Participant::wait_for(std::function<bool()> pred, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return state_cv_.wait_for(lock, timeout, pred);
}

std::size_t Participant::known_participants() const {
  std::lock_guard lock(mu_);
  return remotes_.size();
}

std::size_t Participant::matched_endpoints() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, w] : writers_) n += w.readers.size();
  for (const auto& [id, r] : readers_) n += r.writers.size();
  return n;
}

ParticipantStats Participant::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

// ---------------------------------------------------------------------------
// Sending

void Participant::send_submessage(const Locator& to, wire::Submessage sm) {
  wire::Message msg;
  msg.prefix = prefix_;
  msg.submessages.push_back(std::move(sm));
  const Bytes bytes = wire::encode_message(msg);
  try {
    transport_.send(to, bytes);
    ++stats_.datagrams_sent;
  } catch (const transport::TransportError& e) {
    spdlog::warn("{}: send to {} failed: {}", config_.name, to.to_string(), e.what());
  }
}

void Participant::send_sample(LocalWriter& w, SequenceNumber seq, const Bytes& payload, const Locator& to,
                              bool resend) {
  std::uint64_t datagrams = 0;
  if (payload.size() <= config_.frag_size) {
    send_submessage(to, wire::Submessage{0, wire::Data{w.id, seq, payload}});
    datagrams = 1;
  } else {
    for (auto& frag : wire::fragment_payload(payload, config_.frag_size)) {
      frag.writer_id = w.id;
      frag.seq = seq;
      send_submessage(to, wire::Submessage{0, std::move(frag)});
      ++datagrams;
    }
  }
  (resend ? stats_.data_resent : stats_.data_sent) += datagrams;
}

std::set<Locator> Participant::reader_locators(const LocalWriter& w, bool reliable_only) const {
  std::set<Locator> out;
  for (const auto& [guid, m] : w.readers) {
    if (reliable_only && m.reliability != Reliability::Reliable) continue;
    if (const auto* rp = remote_of(guid)) out.insert(rp->locator);
  }
  return out;
}

const Participant::RemoteParticipant* Participant::remote_of(const Guid& g) const {
  auto it = remotes_.find(g.prefix);
  return it == remotes_.end() ? nullptr : &it->second;
}

void Participant::send_announce() {
  wire::Announce a;
  a.lease_duration_ms = config_.lease_duration_ms;
  for (const auto& [id, w] : writers_)
    a.endpoints.push_back({id, wire::EndpointRole::Writer, w.qos.reliability, w.topic.name, w.topic.type});
  for (const auto& [id, r] : readers_)
    a.endpoints.push_back({id, wire::EndpointRole::Reader, r.qos.reliability, r.topic.name, r.topic.type});
  send_submessage(config_.discovery_group, wire::Submessage{0, std::move(a)});
  ++stats_.announces_sent;
}

void Participant::schedule_heartbeat(LocalWriter& w) {
  if (!w.next_heartbeat_us) w.next_heartbeat_us = clock_.now_us() + std::uint64_t{w.qos.heartbeat_period_ms} * 1000;
}

// ---------------------------------------------------------------------------
// Inbound

void Participant::handle_datagram(const transport::Datagram& d) {
  wire::Message msg;
  try {
    msg = wire::decode_message(d.bytes);
  } catch (const wire::WireError& e) {
    std::lock_guard lock(mu_);
    ++stats_.decode_errors;
    spdlog::debug("{}: undecodable datagram from {}: {}", config_.name, d.source.to_string(), e.what());
    return;
  }
  if (msg.prefix == prefix_) return;  // our own multicast, looped back

  std::lock_guard lock(mu_);
  ++stats_.datagrams_received;
  for (auto& sm : msg.submessages) {
    switch (sm.kind()) {
      case wire::SubmessageKind::Announce:
        on_announce(msg.prefix, d.source, std::get<wire::Announce>(sm.body));
        break;
      case wire::SubmessageKind::Data:
        on_data(msg.prefix, std::move(std::get<wire::Data>(sm.body)));
        break;
      case wire::SubmessageKind::DataFrag:
        on_data_frag(msg.prefix, std::get<wire::DataFrag>(sm.body));
        break;
      case wire::SubmessageKind::Heartbeat:
        on_heartbeat(msg.prefix, std::get<wire::Heartbeat>(sm.body));
        break;
      case wire::SubmessageKind::AckNack:
        on_acknack(msg.prefix, std::get<wire::AckNack>(sm.body));
        break;
    }
  }
}

void Participant::on_announce(const wire::GuidPrefix& from, const Locator& source, const wire::Announce& a) {
  auto [it, inserted] = remotes_.try_emplace(from);
  RemoteParticipant& rp = it->second;
  rp.locator = source;
  rp.lease_expiry_us = clock_.now_us() + std::uint64_t{a.lease_duration_ms} * 1000;
  rp.endpoints = a.endpoints;
  if (inserted) {
    spdlog::info("{}: discovered participant {} at {} ({} endpoints)", config_.name, from.to_string(),
                 source.to_string(), a.endpoints.size());
    // Let the newcomer learn about us without waiting a full period.
    if (announcing_) next_announce_us_ = clock_.now_us();
  }
  rematch(from);
}

void Participant::queue_deliveries(LocalReader& r, const Guid& writer, std::vector<Delivery> deliveries) {
  const std::uint64_t now = clock_.now_us();
  for (auto& d : deliveries) {
    callbacks_.push_back(PendingCallback{&r.callback, SampleInfo{writer, d.seq, now}, std::move(d.payload)});
    ++stats_.samples_delivered;
  }
}

void Participant::on_data(const wire::GuidPrefix& from, wire::Data d) {
  const Guid wg{from, d.writer_id};
  for (auto& [id, r] : readers_) {
    auto it = r.writers.find(wg);
    if (it == r.writers.end()) continue;
    queue_deliveries(r, wg, it->second.on_data(d.seq, d.payload));
  }
}

void Participant::on_data_frag(const wire::GuidPrefix& from, const wire::DataFrag& f) {
  const Guid wg{from, f.writer_id};
  for (auto& [id, r] : readers_) {
    auto it = r.writers.find(wg);
    if (it == r.writers.end()) continue;
    queue_deliveries(r, wg, it->second.on_data_frag(f));
  }
}

void Participant::on_heartbeat(const wire::GuidPrefix& from, const wire::Heartbeat& hb) {
  const Guid wg{from, hb.writer_id};
  const RemoteParticipant* rp = remote_of(wg);
  for (auto& [id, r] : readers_) {
    auto it = r.writers.find(wg);
    if (it == r.writers.end()) continue;
    const auto skipped_before = it->second.skipped();
    auto result = it->second.on_heartbeat(hb, r.id);
    stats_.samples_skipped += it->second.skipped() - skipped_before;
    queue_deliveries(r, wg, std::move(result.deliveries));
    if (result.acknack && rp) {
      send_submessage(rp->locator, acknack_submessage(*result.acknack));
      ++stats_.acknacks_sent;
    }
  }
}

void Participant::on_acknack(const wire::GuidPrefix& from, const wire::AckNack& an) {
  if (an.writer_guid.prefix != prefix_) return;
  auto wit = writers_.find(an.writer_guid.entity_id);
  if (wit == writers_.end()) return;
  LocalWriter& w = wit->second;
  const Guid rg{from, an.reader_id};
  auto rit = w.readers.find(rg);
  if (rit == w.readers.end() || rit->second.reliability != Reliability::Reliable) return;
  const RemoteParticipant* rp = remote_of(rg);
  if (!rp) return;

  AckNackResponse resp = writer_on_acknack(w.history, w.id, rit->second.proxy, an);
  if (resp.stale) return;
  for (SequenceNumber seq : resp.retransmit) send_sample(w, seq, *w.history.find(seq), rp->locator, true);
  if (resp.gap_heartbeat) {
    spdlog::warn("{}: reader {} asked for {} evicted sample(s); advancing it to seq {}", config_.name,
                 rg.to_string(), resp.unrecoverable.size(), resp.gap_heartbeat->first_seq);
    send_submessage(rp->locator, wire::Submessage{0, *resp.gap_heartbeat});
    ++stats_.heartbeats_sent;
  }
  if (has_unacked_locked(w)) schedule_heartbeat(w);
  state_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Matching

void Participant::match_local_writer(LocalWriter& w) {
  for (const auto& [prefix, rp] : remotes_) {
    for (const auto& e : rp.endpoints) {
      if (e.role != wire::EndpointRole::Reader || !same_topic(w.topic, e) ||
          !reliability_compatible(w.qos.reliability, e.reliability))
        continue;
      const Guid rg{prefix, e.entity_id};
      if (w.readers.contains(rg)) continue;
      w.readers.emplace(rg, MatchedReader{e.reliability, ReaderProxy{rg, 1, std::nullopt}});
      spdlog::info("{}: writer {} matched reader {}", config_.name, w.topic.name, rg.to_string());
      if (e.reliability == Reliability::Reliable && w.history.size() > 0) schedule_heartbeat(w);
    }
  }
}

void Participant::match_local_reader(LocalReader& r) {
  for (const auto& [prefix, rp] : remotes_) {
    for (const auto& e : rp.endpoints) {
      if (e.role != wire::EndpointRole::Writer || !same_topic(r.topic, e) ||
          !reliability_compatible(e.reliability, r.qos.reliability))
        continue;
      const Guid wg{prefix, e.entity_id};
      if (r.writers.contains(wg)) continue;
      SequenceNumber resume = 0;
      if (auto hw = delivered_high_water_.find({r.id, wg}); hw != delivered_high_water_.end()) resume = hw->second;
      r.writers.emplace(wg, WriterProxy(wg, r.qos.reliability, resume, config_.max_reassemblies));
      spdlog::info("{}: reader {} matched writer {}", config_.name, r.topic.name, wg.to_string());
    }
  }
}

void Participant::rematch(const wire::GuidPrefix& remote) {
  const auto& endpoints = remotes_.at(remote).endpoints;
  auto still_offered = [&](const Guid& g, wire::EndpointRole role, auto&& compatible) {
    return std::any_of(endpoints.begin(), endpoints.end(), [&](const wire::EndpointInfo& e) {
      return e.entity_id == g.entity_id && e.role == role && compatible(e);
    });
  };

  for (auto& [id, w] : writers_) {
    std::erase_if(w.readers, [&](const auto& kv) {
      return kv.first.prefix == remote &&
             !still_offered(kv.first, wire::EndpointRole::Reader, [&](const wire::EndpointInfo& e) {
               return same_topic(w.topic, e) && reliability_compatible(w.qos.reliability, e.reliability);
             });
    });
    match_local_writer(w);
  }
  for (auto& [id, r] : readers_) {
    std::erase_if(r.writers, [&](const auto& kv) {
      const bool gone = kv.first.prefix == remote &&
                        !still_offered(kv.first, wire::EndpointRole::Writer, [&](const wire::EndpointInfo& e) {
                          return same_topic(r.topic, e) && reliability_compatible(e.reliability, r.qos.reliability);
                        });
      if (gone) delivered_high_water_[{r.id, kv.first}] = kv.second.highest_delivered();
      return gone;
    });
    match_local_reader(r);
  }
  state_cv_.notify_all();
}

void Participant::unmatch_participant(const wire::GuidPrefix& remote) {
  for (auto& [id, w] : writers_)
    std::erase_if(w.readers, [&](const auto& kv) { return kv.first.prefix == remote; });
  for (auto& [id, r] : readers_) {
    std::erase_if(r.writers, [&](const auto& kv) {
      if (kv.first.prefix != remote) return false;
      delivered_high_water_[{r.id, kv.first}] = kv.second.highest_delivered();
      return true;
    });
  }
  remotes_.erase(remote);
  state_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Timers

void Participant::handle_timers() {
  std::lock_guard lock(mu_);
  const std::uint64_t now = clock_.now_us();

  if (announcing_ && now >= next_announce_us_) {
    send_announce();
    next_announce_us_ = now + std::uint64_t{config_.announce_period_ms} * 1000;
  }

  std::vector<wire::GuidPrefix> expired;
  for (const auto& [prefix, rp] : remotes_) {
    if (rp.lease_expiry_us <= now) expired.push_back(prefix);
  }
  for (const auto& prefix : expired) {
    spdlog::info("{}: lease of participant {} expired", config_.name, prefix.to_string());
    unmatch_participant(prefix);
  }

  for (auto& [id, w] : writers_) {
    if (!w.next_heartbeat_us || *w.next_heartbeat_us > now) continue;
    if (w.qos.reliability != Reliability::Reliable || !has_unacked_locked(w)) {
      w.next_heartbeat_us.reset();
      continue;
    }
    const wire::Heartbeat hb = w.history.make_heartbeat(w.id);
    for (const Locator& loc : reader_locators(w, true)) {
      send_submessage(loc, wire::Submessage{0, hb});
      ++stats_.heartbeats_sent;
    }
    w.next_heartbeat_us = now + std::uint64_t{w.qos.heartbeat_period_ms} * 1000;
  }
}

std::uint64_t Participant::next_deadline_us() const {
  std::lock_guard lock(mu_);
  std::uint64_t best = clock_.now_us() + 1'000'000;
  if (announcing_) best = std::min(best, next_announce_us_);
  for (const auto& [prefix, rp] : remotes_) best = std::min(best, rp.lease_expiry_us);
  for (const auto& [id, w] : writers_) {
    if (w.next_heartbeat_us) best = std::min(best, *w.next_heartbeat_us);
  }
  return best;
}

void Participant::dispatch() {
  std::lock_guard serial(dispatch_mu_);
  std::vector<PendingCallback> batch;
  {
    std::lock_guard lock(mu_);
    batch.swap(callbacks_);
  }
  for (auto& cb : batch) {
    // readers_ nodes are never erased and callbacks never reassigned.
    if (!*cb.fn) continue;
    try {
      (*cb.fn)(cb.info, std::move(cb.payload));
    } catch (const std::exception& e) {
      spdlog::error("{}: reader callback threw: {}", config_.name, e.what());
    }
  }
}

}  // namespace meddds::pubsub
