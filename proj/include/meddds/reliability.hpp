#pragma once

// Transport-free reliability state machines. The participant owns one
// WriterHistory per local writer, one ReaderProxy per matched remote reader,
// and one WriterProxy per (local reader, matched remote writer).

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "meddds/wire.hpp"

namespace meddds::pubsub {

using meddds::Bytes;
using wire::EntityId;
using wire::Guid;
using wire::Reliability;
using wire::SequenceNumber;

struct QoS {
  Reliability reliability = Reliability::Reliable;
  std::size_t history_depth = 16;
  std::uint32_t heartbeat_period_ms = 50;

  void validate() const;
};

// A reader matches a writer when the reader asks for no more reliability
// than the writer offers.
constexpr bool reliability_compatible(Reliability writer, Reliability reader) {
  return static_cast<int>(reader) <= static_cast<int>(writer);
}

class WriterHistory {
 public:
  explicit WriterHistory(std::size_t depth);

  // Assigns the next sequence number, evicting the oldest sample once more
  // than `depth` are retained.
  SequenceNumber add(Bytes payload);

  const Bytes* find(SequenceNumber seq) const;

  // Oldest retained seq; equals next_seq() when nothing is retained.
  SequenceNumber first_seq() const { return next_seq_ - samples_.size(); }
  SequenceNumber last_seq() const { return next_seq_ - 1; }
  SequenceNumber next_seq() const { return next_seq_; }
  std::size_t size() const { return samples_.size(); }
  std::size_t depth() const { return depth_; }
  bool full() const { return samples_.size() >= depth_; }

  // Stamps a fresh, monotonically counted HEARTBEAT for the retained range.
  wire::Heartbeat make_heartbeat(EntityId writer_id);

 private:
  std::size_t depth_;
  SequenceNumber next_seq_ = 1;
  std::deque<Bytes> samples_;
  std::uint32_t heartbeat_count_ = 0;
};

// Writer-side record of one matched RELIABLE remote reader.
struct ReaderProxy {
  Guid reader;
  SequenceNumber acked_below = 1;  // every seq < acked_below is acknowledged
  std::optional<std::uint32_t> last_acknack_count;

  bool acknowledged(SequenceNumber seq) const { return seq < acked_below; }
};

struct AckNackResponse {
  bool stale = false;
  std::vector<SequenceNumber> retransmit;
  // Sent instead of data when requested samples were already evicted.
  std::optional<wire::Heartbeat> gap_heartbeat;
  std::vector<SequenceNumber> unrecoverable;
};

AckNackResponse writer_on_acknack(WriterHistory& history, EntityId writer_id, ReaderProxy& proxy,
                                  const wire::AckNack& acknack);

struct Delivery {
  SequenceNumber seq = 0;
  Bytes payload;
};

// Reader-side record of one matched remote writer. `reliability` is the
// effective QoS of the pairing, i.e. the reader's own request.
class WriterProxy {
 public:
  static constexpr std::size_t kDefaultMaxReassemblies = 8;
  static constexpr std::uint32_t kMaxPayloadBytes = 64u << 20;

  WriterProxy(Guid writer, Reliability reliability, SequenceNumber highest_delivered = 0,
              std::size_t max_reassemblies = kDefaultMaxReassemblies);

  std::vector<Delivery> on_data(SequenceNumber seq, Bytes payload);
  // Malformed trains are discarded; returns nothing in that case.
  std::vector<Delivery> on_data_frag(const wire::DataFrag& frag);

  struct HeartbeatResult {
    std::optional<wire::AckNack> acknack;
    std::vector<Delivery> deliveries;  // released by skipping an unrecoverable gap
  };
  // BEST_EFFORT pairings never answer.
  HeartbeatResult on_heartbeat(const wire::Heartbeat& hb, EntityId reader_id);

  const Guid& writer() const { return writer_; }
  Reliability reliability() const { return reliability_; }
  SequenceNumber highest_delivered() const { return highest_delivered_; }
  std::size_t buffered() const { return pending_.size(); }
  std::size_t reassemblies() const { return assemblies_.size(); }
  std::uint64_t skipped() const { return skipped_; }
  std::uint64_t dropped_fragments() const { return dropped_fragments_; }

 private:
  bool received(SequenceNumber seq) const;
  std::vector<Delivery> accept(SequenceNumber seq, Bytes payload);
  void drain_contiguous(std::vector<Delivery>& out);
  void skip_to(SequenceNumber first_available, std::vector<Delivery>& out);

  Guid writer_;
  Reliability reliability_;
  SequenceNumber highest_delivered_;
  std::size_t max_reassemblies_;
  std::map<SequenceNumber, Bytes> pending_;
  std::map<SequenceNumber, wire::FragmentAssembler> assemblies_;
  std::optional<std::uint32_t> last_heartbeat_count_;
  std::uint32_t acknack_count_ = 0;
  std::uint64_t skipped_ = 0;
  std::uint64_t dropped_fragments_ = 0;
};

// ACKNACKs that request nothing carry the final flag.
wire::Submessage acknack_submessage(const wire::AckNack& an);

}  // namespace meddds::pubsub
