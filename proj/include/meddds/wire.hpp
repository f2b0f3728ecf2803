#pragma once

// Binary protocol spoken between participants. One Message per UDP datagram:
//
//   "MDDS" | major u8 | minor u8 | guid_prefix[12] | submessage*
//   submessage := kind u8 | flags u8 | body_len u16 | body
//
// All integers are little-endian and the encoding is canonical, so
// decode(encode(m)) == m and encode(decode(b)) == b for every b the encoder
// can produce.

#include <array>
#include <bitset>
#include <compare>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "meddds/bytes.hpp"

namespace meddds::wire {

inline constexpr std::size_t kMaxMessageSize = 65'507;
inline constexpr std::size_t kHeaderSize = 18;
inline constexpr std::size_t kSubmessageHeaderSize = 4;
inline constexpr std::size_t kMaxNameLength = 256;
inline constexpr std::uint32_t kMaxAckNackBits = 256;
inline constexpr std::size_t kDefaultFragSize = 1'200;
inline constexpr std::uint8_t kProtocolMajor = 1;
inline constexpr std::uint8_t kProtocolMinor = 0;

// DATA body overhead before the payload: writer u32, seq u64, len u32.
inline constexpr std::size_t kDataOverhead = 16;
// DATA_FRAG body overhead: writer, seq, index, count, total_len.
inline constexpr std::size_t kDataFragOverhead = 24;

using EntityId = std::uint32_t;
using SequenceNumber = std::uint64_t;

inline constexpr EntityId kEntityIdUnknown = 0;
inline constexpr EntityId kEntityIdParticipant = 0xFFFF'FFFF;

struct GuidPrefix {
  std::array<std::uint8_t, 12> bytes{};

  static GuidPrefix random(std::mt19937_64& rng);
  static GuidPrefix random();  // OS entropy
  std::string to_string() const;

  auto operator<=>(const GuidPrefix&) const = default;
};

struct Guid {
  GuidPrefix prefix;
  EntityId entity_id = kEntityIdUnknown;

  std::string to_string() const;
  auto operator<=>(const Guid&) const = default;
};

enum class SubmessageKind : std::uint8_t {
  Announce = 1,
  Data = 2,
  DataFrag = 3,
  Heartbeat = 4,
  AckNack = 5,
};

enum class EndpointRole : std::uint8_t { Writer = 1, Reader = 2 };

// Ordered: a writer serves any reader whose reliability is <= its own.
enum class Reliability : std::uint8_t { BestEffort = 1, Reliable = 2 };

struct EndpointInfo {
  EntityId entity_id = kEntityIdUnknown;
  EndpointRole role = EndpointRole::Writer;
  Reliability reliability = Reliability::Reliable;
  std::string topic_name;
  std::string type_name;

  bool operator==(const EndpointInfo&) const = default;
};

struct Announce {
  std::uint32_t lease_duration_ms = 0;
  std::vector<EndpointInfo> endpoints;

  bool operator==(const Announce&) const = default;
};

struct Data {
  EntityId writer_id = kEntityIdUnknown;
  SequenceNumber seq = 0;
  Bytes payload;

  bool operator==(const Data&) const = default;
};

struct DataFrag {
  EntityId writer_id = kEntityIdUnknown;
  SequenceNumber seq = 0;
  std::uint32_t frag_index = 0;
  std::uint32_t frag_count = 0;
  std::uint32_t total_len = 0;
  Bytes fragment;

  bool operator==(const DataFrag&) const = default;
};

// first_seq..last_seq is the writer's retained range; last == first - 1
// means the history is empty.
struct Heartbeat {
  EntityId writer_id = kEntityIdUnknown;
  SequenceNumber first_seq = 1;
  SequenceNumber last_seq = 0;
  std::uint32_t count = 0;

  bool operator==(const Heartbeat&) const = default;
};

// Every seq < base_seq is acknowledged. Bit i of `missing` requests
// base_seq + i; only the first `num_bits` bits are meaningful.
struct AckNack {
  EntityId reader_id = kEntityIdUnknown;
  Guid writer_guid;
  SequenceNumber base_seq = 1;
  std::uint32_t num_bits = 0;
  std::bitset<kMaxAckNackBits> missing;
  std::uint32_t count = 0;

  std::vector<SequenceNumber> requested() const;
  bool operator==(const AckNack&) const = default;
};

using SubmessageBody = std::variant<Announce, Data, DataFrag, Heartbeat, AckNack>;

inline constexpr std::uint8_t kFlagFinal = 0x01;

struct Submessage {
  std::uint8_t flags = 0;
  SubmessageBody body;

  SubmessageKind kind() const;
  bool final() const { return (flags & kFlagFinal) != 0; }
  bool operator==(const Submessage&) const = default;
};

struct Message {
  std::uint8_t version_minor = kProtocolMinor;
  GuidPrefix prefix;
  std::vector<Submessage> submessages;

  bool operator==(const Message&) const = default;
};

enum class WireErrc {
  OversizeMessage,
  BadMagic,
  BadVersion,
  Truncated,
  Malformed,
  EmptyPayload,
  InconsistentFragment,
};

const char* to_string(WireErrc e);

class WireError : public std::runtime_error {
 public:
  WireError(WireErrc code, const std::string& what);
  WireErrc code() const { return code_; }

 private:
  WireErrc code_;
};

Bytes encode_message(const Message& msg);
std::size_t encoded_size(const Message& msg);
Message decode_message(ByteView bytes);

// Splits `payload` into ceil(len / frag_size) DATA_FRAG bodies. writer_id
// and seq are left for the caller to stamp.
std::vector<DataFrag> fragment_payload(ByteView payload, std::size_t frag_size);

// Collects the fragments of one (writer, seq) sample. Accepts fragments in
// any order; duplicates are ignored. The fragment size is inferred from the
// first fragment that pins it and enforced for all others.
class FragmentAssembler {
 public:
  // Returns true once the sample is complete. Throws InconsistentFragment if
  // the fragment disagrees with what has been seen so far.
  bool add(const DataFrag& frag);

  bool complete() const { return received_ == frag_count_ && frag_count_ != 0; }
  std::uint32_t received() const { return received_; }
  std::uint32_t frag_count() const { return frag_count_; }
  std::uint32_t total_len() const { return total_len_; }

  // Moves the payload out. Requires complete().
  Bytes take();

 private:
  void check_size(const DataFrag& frag);

  std::uint32_t total_len_ = 0;
  std::uint32_t frag_count_ = 0;
  std::uint32_t frag_size_ = 0;  // 0 until pinned
  std::uint32_t received_ = 0;
  std::vector<bool> have_;
  Bytes buffer_;
};

// One-shot convenience over FragmentAssembler: nullopt means Incomplete.
std::optional<Bytes> reassemble(const std::vector<DataFrag>& frags);

}  // namespace meddds::wire
