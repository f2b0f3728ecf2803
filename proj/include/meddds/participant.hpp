#pragma once

// A participant is one middleware instance: it owns local writers and readers,
// discovers remote participants through periodic ANNOUNCEs on a multicast
// group, matches endpoints by (topic, type, reliability), and runs the
// HEARTBEAT / ACKNACK protocol for RELIABLE pairings.
//
// All protocol state is touched under a single mutex by the protocol context
// (either the background thread started by start(), or an external driver
// calling pump()). Reader callbacks are queued while the state lock is held
// and run afterwards from dispatch(), one at a time and in delivery order.
// Callbacks may call Writer::write() but must not block waiting for
// acknowledgments: the protocol context is the one that would process them.

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "meddds/clock.hpp"
#include "meddds/reliability.hpp"
#include "meddds/transport.hpp"
#include "meddds/wire.hpp"

namespace meddds::pubsub {

struct ParticipantConfig {
  std::uint32_t announce_period_ms = 1'000;
  std::uint32_t lease_duration_ms = 10'000;
  transport::Locator discovery_group = transport::kDefaultDiscoveryGroup;
  std::size_t frag_size = wire::kDefaultFragSize;
  std::size_t max_reassemblies = WriterProxy::kDefaultMaxReassemblies;
  // When a RELIABLE writer's history is full of unacknowledged samples,
  // write() waits up to max_blocking_ms (only while start()ed) before
  // failing with HistoryFull.
  bool block_when_full = true;
  std::uint32_t max_blocking_ms = 5'000;
  // Fixed seed for a reproducible guid prefix; OS entropy otherwise.
  std::optional<std::uint64_t> guid_seed;
  std::string name = "participant";

  void validate() const;
};

struct TopicDescription {
  std::string name;
  std::string type;
};

struct SampleInfo {
  Guid writer;
  SequenceNumber seq = 0;
  std::uint64_t reception_us = 0;
};

using DataCallback = std::function<void(const SampleInfo&, Bytes payload)>;

enum class PubSubErrc { EmptyPayload, HistoryFull, DuplicateEntity, NameTooLong, UnknownEntity };

class PubSubError : public std::runtime_error {
 public:
  PubSubError(PubSubErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  PubSubErrc code() const { return code_; }

 private:
  PubSubErrc code_;
};

struct ParticipantStats {
  std::uint64_t datagrams_sent = 0;
  std::uint64_t datagrams_received = 0;
  std::uint64_t data_sent = 0;       // DATA + DATA_FRAG datagrams, first transmission
  std::uint64_t data_resent = 0;     // DATA + DATA_FRAG datagrams, retransmissions
  std::uint64_t heartbeats_sent = 0;
  std::uint64_t acknacks_sent = 0;
  std::uint64_t announces_sent = 0;
  std::uint64_t samples_delivered = 0;
  std::uint64_t samples_skipped = 0;
  std::uint64_t decode_errors = 0;
};

class Participant;

// Lightweight handles; valid for the lifetime of the owning participant.
class Writer {
 public:
  Writer() = default;

  // Returns the sequence number assigned to the sample.
  SequenceNumber write(ByteView payload);
  // False if a RELIABLE write would block right now.
  bool can_write() const;
  std::size_t matched_readers() const;
  bool all_acknowledged() const;
  bool wait_for_matched(std::size_t n, std::chrono::milliseconds timeout) const;
  Guid guid() const;

 private:
  friend class Participant;
  Writer(Participant* p, EntityId id) : participant_(p), id_(id) {}
  Participant* participant_ = nullptr;
  EntityId id_ = wire::kEntityIdUnknown;
};

class Reader {
 public:
  Reader() = default;

  std::size_t matched_writers() const;
  bool wait_for_matched(std::size_t n, std::chrono::milliseconds timeout) const;
  Guid guid() const;

 private:
  friend class Participant;
  Reader(Participant* p, EntityId id) : participant_(p), id_(id) {}
  Participant* participant_ = nullptr;
  EntityId id_ = wire::kEntityIdUnknown;
};

class Participant {
 public:
  Participant(transport::Transport& transport, const Clock& clock, ParticipantConfig config = {});
  ~Participant();
  Participant(const Participant&) = delete;
  Participant& operator=(const Participant&) = delete;

  Writer create_writer(const TopicDescription& topic, const QoS& qos);
  Reader create_reader(const TopicDescription& topic, const QoS& qos, DataCallback on_data);

  // Background protocol thread.
  void start();
  void stop();
  bool running() const { return running_.load(); }

  // Single-threaded driving: handle everything receivable now, fire due
  // timers, run callbacks. Used by deterministic simulations.
  void pump();

  void handle_datagram(const transport::Datagram& d);
  void handle_timers();
  void dispatch();
  std::uint64_t next_deadline_us() const;

  // Stops/resumes periodic ANNOUNCEs (lease-expiry testing).
  void set_announcing(bool on);

  const wire::GuidPrefix& guid_prefix() const { return prefix_; }
  const ParticipantConfig& config() const { return config_; }
  std::size_t known_participants() const;
  std::size_t matched_endpoints() const;
  ParticipantStats stats() const;

 private:
  friend class Writer;
  friend class Reader;

  struct RemoteParticipant {
    transport::Locator locator;
    std::uint64_t lease_expiry_us = 0;
    std::vector<wire::EndpointInfo> endpoints;
  };
  struct MatchedReader {
    Reliability reliability;
    ReaderProxy proxy;
  };
  struct LocalWriter {
    EntityId id;
    TopicDescription topic;
    QoS qos;
    WriterHistory history;
    std::map<Guid, MatchedReader> readers;
    std::optional<std::uint64_t> next_heartbeat_us;
  };
  struct LocalReader {
    EntityId id;
    TopicDescription topic;
    QoS qos;
    DataCallback callback;
    std::map<Guid, WriterProxy> writers;
  };
  struct PendingCallback {
    const DataCallback* fn;
    SampleInfo info;
    Bytes payload;
  };

  SequenceNumber write(EntityId writer, ByteView payload);
  bool can_write_locked(const LocalWriter& w) const;
  bool has_unacked_locked(const LocalWriter& w) const;
  std::size_t matched_readers(EntityId writer) const;
  std::size_t matched_writers(EntityId reader) const;
  bool all_acknowledged(EntityId writer) const;
  bool wait_for(std::function<bool()> pred, std::chrono::milliseconds timeout) const;

  EntityId allocate_entity_id();
  void check_topic(const TopicDescription& topic) const;

  void send_submessage(const transport::Locator& to, wire::Submessage sm);
  void send_sample(LocalWriter& w, SequenceNumber seq, const Bytes& payload, const transport::Locator& to, bool resend);
  std::set<transport::Locator> reader_locators(const LocalWriter& w, bool reliable_only) const;
  const RemoteParticipant* remote_of(const Guid& g) const;

  void on_announce(const wire::GuidPrefix& from, const transport::Locator& source, const wire::Announce& a);
  void on_data(const wire::GuidPrefix& from, wire::Data d);
  void on_data_frag(const wire::GuidPrefix& from, const wire::DataFrag& f);
  void on_heartbeat(const wire::GuidPrefix& from, const wire::Heartbeat& hb);
  void on_acknack(const wire::GuidPrefix& from, const wire::AckNack& an);
  void queue_deliveries(LocalReader& r, const Guid& writer, std::vector<Delivery> deliveries);

  void rematch(const wire::GuidPrefix& remote);
  void unmatch_participant(const wire::GuidPrefix& remote);
  void match_local_writer(LocalWriter& w);
  void match_local_reader(LocalReader& r);
  void send_announce();
  void schedule_heartbeat(LocalWriter& w);

  transport::Transport& transport_;
  const Clock& clock_;
  ParticipantConfig config_;
  wire::GuidPrefix prefix_;

  mutable std::mutex mu_;
  mutable std::condition_variable state_cv_;
  EntityId next_entity_id_ = 1;
  std::map<EntityId, LocalWriter> writers_;
  std::map<EntityId, LocalReader> readers_;
  std::map<wire::GuidPrefix, RemoteParticipant> remotes_;
  // Last delivered seq per (reader, remote writer), kept across unmatching
  // so that a re-matched writer does not replay samples.
  std::map<std::pair<EntityId, Guid>, SequenceNumber> delivered_high_water_;
  std::uint64_t next_announce_us_ = 0;
  bool announcing_ = true;
  std::vector<PendingCallback> callbacks_;
  ParticipantStats stats_;

  std::mutex dispatch_mu_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stop_requested_{false};
  std::thread thread_;
};

}  // namespace meddds::pubsub
