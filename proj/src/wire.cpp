#include "meddds/wire.hpp"

#include <algorithm>
#include <cstdio>

#include <fmt/format.h>

namespace meddds::wire {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'M', 'D', 'D', 'S'};

[[noreturn]] void fail(WireErrc code, const std::string& what) { throw WireError(code, what); }

std::string hex(std::span<const std::uint8_t> b) {
  std::string s;
  s.reserve(b.size() * 2);
  for (auto v : b) s += fmt::format("{:02x}", v);
  return s;
}

std::size_t bitmap_bytes(std::uint32_t num_bits) { return (num_bits + 7) / 8; }

std::size_t body_size(const SubmessageBody& body) {
  struct Sizer {
    std::size_t operator()(const Announce& a) const {
      std::size_t n = 4 + 2;
      for (const auto& e : a.endpoints) n += 4 + 1 + 1 + 2 + e.topic_name.size() + 2 + e.type_name.size();
      return n;
    }
    std::size_t operator()(const Data& d) const { return kDataOverhead + d.payload.size(); }
    std::size_t operator()(const DataFrag& d) const { return kDataFragOverhead + d.fragment.size(); }
    std::size_t operator()(const Heartbeat&) const { return 4 + 8 + 8 + 4; }
    std::size_t operator()(const AckNack& a) const { return 4 + 16 + 8 + 4 + bitmap_bytes(a.num_bits) + 4; }
  };
  return std::visit(Sizer{}, body);
}

void validate(const Submessage& sm) {
  struct Validator {
    void operator()(const Announce& a) const {
      if (a.endpoints.size() > 0xFFFF) fail(WireErrc::Malformed, "too many endpoints in ANNOUNCE");
      for (const auto& e : a.endpoints) {
        if (e.topic_name.size() > kMaxNameLength || e.type_name.size() > kMaxNameLength)
          fail(WireErrc::Malformed, "topic or type name longer than 256 bytes");
      }
    }
    void operator()(const Data& d) const {
      if (d.payload.size() > 0xFFFF'FFFFu) fail(WireErrc::OversizeMessage, "payload too large");
    }
    void operator()(const DataFrag& d) const {
      if (d.frag_count == 0 || d.frag_index >= d.frag_count)
        fail(WireErrc::Malformed, "DATA_FRAG index out of range");
      if (d.fragment.empty() || d.fragment.size() > d.total_len)
        fail(WireErrc::Malformed, "DATA_FRAG fragment size out of range");
    }
    void operator()(const Heartbeat& h) const {
      if (h.first_seq < 1 || h.last_seq + 1 < h.first_seq)
        fail(WireErrc::Malformed, "HEARTBEAT range invalid");
    }
    void operator()(const AckNack& a) const {
      if (a.num_bits > kMaxAckNackBits) fail(WireErrc::Malformed, "ACKNACK bitmap longer than 256 bits");
      for (std::uint32_t i = a.num_bits; i < kMaxAckNackBits; ++i) {
        if (a.missing.test(i)) fail(WireErrc::Malformed, "ACKNACK bit set beyond bitmap_len");
      }
    }
  };
  std::visit(Validator{}, sm.body);
}

void write_guid_prefix(ByteWriter& w, const GuidPrefix& p) { w.raw(ByteView(p.bytes)); }

void write_string(ByteWriter& w, const std::string& s) {
  w.u16(static_cast<std::uint16_t>(s.size()));
  w.raw(std::string_view(s));
}

void write_body(ByteWriter& w, const SubmessageBody& body) {
  struct Encoder {
    ByteWriter& w;
    void operator()(const Announce& a) const {
      w.u32(a.lease_duration_ms);
      w.u16(static_cast<std::uint16_t>(a.endpoints.size()));
      for (const auto& e : a.endpoints) {
        w.u32(e.entity_id);
        w.u8(static_cast<std::uint8_t>(e.role));
        w.u8(static_cast<std::uint8_t>(e.reliability));
        write_string(w, e.topic_name);
        write_string(w, e.type_name);
      }
    }
    void operator()(const Data& d) const {
      w.u32(d.writer_id);
      w.u64(d.seq);
      w.u32(static_cast<std::uint32_t>(d.payload.size()));
      w.raw(d.payload);
    }
    void operator()(const DataFrag& d) const {
      w.u32(d.writer_id);
      w.u64(d.seq);
      w.u32(d.frag_index);
      w.u32(d.frag_count);
      w.u32(d.total_len);
      w.raw(d.fragment);
    }
    void operator()(const Heartbeat& h) const {
      w.u32(h.writer_id);
      w.u64(h.first_seq);
      w.u64(h.last_seq);
      w.u32(h.count);
    }
    void operator()(const AckNack& a) const {
      w.u32(a.reader_id);
      write_guid_prefix(w, a.writer_guid.prefix);
      w.u32(a.writer_guid.entity_id);
      w.u64(a.base_seq);
      w.u32(a.num_bits);
      for (std::size_t byte = 0; byte < bitmap_bytes(a.num_bits); ++byte) {
        std::uint8_t v = 0;
        for (std::size_t bit = 0; bit < 8; ++bit) {
          if (a.missing.test(byte * 8 + bit)) v |= static_cast<std::uint8_t>(1u << bit);
        }
        w.u8(v);
      }
      w.u32(a.count);
    }
  };
  std::visit(Encoder{w}, body);
}

// Body decoders return nullopt on truncation inside the body; structural
// violations throw Malformed.
bool read_string(ByteReader& r, std::string& out) {
  std::uint16_t len;
  ByteView bytes;
  if (!r.u16(len)) return false;
  if (len > kMaxNameLength) fail(WireErrc::Malformed, "name longer than 256 bytes");
  if (!r.take(len, bytes)) return false;
  out.assign(bytes.begin(), bytes.end());
  return true;
}

bool read_guid(ByteReader& r, Guid& g) {
  ByteView p;
  if (!r.take(12, p)) return false;
  std::copy(p.begin(), p.end(), g.prefix.bytes.begin());
  return r.u32(g.entity_id);
}

std::optional<SubmessageBody> read_body(SubmessageKind kind, ByteReader& r) {
  switch (kind) {
    case SubmessageKind::Announce: {
      Announce a;
      std::uint16_t n;
      if (!r.u32(a.lease_duration_ms) || !r.u16(n)) return std::nullopt;
      a.endpoints.reserve(std::min<std::size_t>(n, r.remaining() / 10));
      for (std::uint16_t i = 0; i < n; ++i) {
        EndpointInfo e;
        std::uint8_t role, rel;
        if (!r.u32(e.entity_id) || !r.u8(role) || !r.u8(rel)) return std::nullopt;
        if (role < 1 || role > 2) fail(WireErrc::Malformed, "unknown endpoint role");
        if (rel < 1 || rel > 2) fail(WireErrc::Malformed, "unknown reliability kind");
        e.role = static_cast<EndpointRole>(role);
        e.reliability = static_cast<Reliability>(rel);
        if (!read_string(r, e.topic_name) || !read_string(r, e.type_name)) return std::nullopt;
        a.endpoints.push_back(std::move(e));
      }
      return a;
    }
    case SubmessageKind::Data: {
      Data d;
      std::uint32_t len;
      ByteView p;
      if (!r.u32(d.writer_id) || !r.u64(d.seq) || !r.u32(len) || !r.take(len, p)) return std::nullopt;
      d.payload.assign(p.begin(), p.end());
      return d;
    }
    case SubmessageKind::DataFrag: {
      DataFrag d;
      if (!r.u32(d.writer_id) || !r.u64(d.seq) || !r.u32(d.frag_index) || !r.u32(d.frag_count) ||
          !r.u32(d.total_len))
        return std::nullopt;
      ByteView p;
      if (!r.take(r.remaining(), p)) return std::nullopt;
      d.fragment.assign(p.begin(), p.end());
      return d;
    }
    case SubmessageKind::Heartbeat: {
      Heartbeat h;
      if (!r.u32(h.writer_id) || !r.u64(h.first_seq) || !r.u64(h.last_seq) || !r.u32(h.count))
        return std::nullopt;
      return h;
    }
    case SubmessageKind::AckNack: {
      AckNack a;
      if (!r.u32(a.reader_id) || !read_guid(r, a.writer_guid) || !r.u64(a.base_seq) || !r.u32(a.num_bits))
        return std::nullopt;
      if (a.num_bits > kMaxAckNackBits) fail(WireErrc::Malformed, "ACKNACK bitmap longer than 256 bits");
      ByteView bits;
      if (!r.take(bitmap_bytes(a.num_bits), bits)) return std::nullopt;
      for (std::size_t i = 0; i < bits.size() * 8; ++i) {
        if ((bits[i / 8] >> (i % 8)) & 1u) {
          if (i >= a.num_bits) fail(WireErrc::Malformed, "ACKNACK padding bits not zero");
          a.missing.set(i);
        }
      }
      if (!r.u32(a.count)) return std::nullopt;
      return a;
    }
  }
  return std::nullopt;
}

bool known_kind(std::uint8_t k) { return k >= 1 && k <= 5; }

}  // namespace

GuidPrefix GuidPrefix::random(std::mt19937_64& rng) {
  GuidPrefix p;
  for (std::size_t i = 0; i < p.bytes.size(); i += 8) {
    std::uint64_t v = rng();
    for (std::size_t j = 0; j < 8 && i + j < p.bytes.size(); ++j) p.bytes[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
  }
  return p;
}

GuidPrefix GuidPrefix::random() {
  std::random_device rd;
  std::seed_seq seq{rd(), rd(), rd(), rd()};
  std::mt19937_64 rng(seq);
  return random(rng);
}

std::string GuidPrefix::to_string() const { return hex(bytes); }

std::string Guid::to_string() const { return fmt::format("{}.{:08x}", prefix.to_string(), entity_id); }

std::vector<SequenceNumber> AckNack::requested() const {
  std::vector<SequenceNumber> out;
  for (std::uint32_t i = 0; i < num_bits; ++i) {
    if (missing.test(i)) out.push_back(base_seq + i);
  }
  return out;
}

SubmessageKind Submessage::kind() const {
  return static_cast<SubmessageKind>(body.index() + 1);
}

const char* to_string(WireErrc e) {
  switch (e) {
    case WireErrc::OversizeMessage: return "OversizeMessage";
    case WireErrc::BadMagic: return "BadMagic";
    case WireErrc::BadVersion: return "BadVersion";
    case WireErrc::Truncated: return "Truncated";
    case WireErrc::Malformed: return "Malformed";
    case WireErrc::EmptyPayload: return "EmptyPayload";
    case WireErrc::InconsistentFragment: return "InconsistentFragment";
  }
  return "?";
}

WireError::WireError(WireErrc code, const std::string& what)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), what)), code_(code) {}

std::size_t encoded_size(const Message& msg) {
  std::size_t n = kHeaderSize;
  for (const auto& sm : msg.submessages) n += kSubmessageHeaderSize + body_size(sm.body);
  return n;
}

Bytes encode_message(const Message& msg) {
  for (const auto& sm : msg.submessages) {
    if (body_size(sm.body) > 0xFFFF)
      fail(WireErrc::OversizeMessage, fmt::format("submessage body of {} bytes", body_size(sm.body)));
  }
  const std::size_t total = encoded_size(msg);
  if (total > kMaxMessageSize) fail(WireErrc::OversizeMessage, fmt::format("message of {} bytes", total));
  for (const auto& sm : msg.submessages) validate(sm);

  Bytes out;
  ByteWriter w(out);
  w.raw(ByteView(kMagic));
  w.u8(kProtocolMajor);
  w.u8(msg.version_minor);
  write_guid_prefix(w, msg.prefix);
  for (const auto& sm : msg.submessages) {
    w.u8(static_cast<std::uint8_t>(sm.kind()));
    w.u8(sm.flags);
    const std::size_t len_pos = w.size();
    w.u16(0);
    write_body(w, sm.body);
    w.patch_u16(len_pos, static_cast<std::uint16_t>(w.size() - len_pos - 2));
  }
  return out;
}

Message decode_message(ByteView bytes) {
  ByteReader r(bytes);
  ByteView magic;
  if (!r.take(4, magic)) fail(WireErrc::Truncated, "short header");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) fail(WireErrc::BadMagic, "expected \"MDDS\"");
  std::uint8_t major;
  Message msg;
  if (!r.u8(major) || !r.u8(msg.version_minor)) fail(WireErrc::Truncated, "short header");
  if (major != kProtocolMajor) fail(WireErrc::BadVersion, fmt::format("major version {}", major));
  ByteView prefix;
  if (!r.take(12, prefix)) fail(WireErrc::Truncated, "short header");
  std::copy(prefix.begin(), prefix.end(), msg.prefix.bytes.begin());

  while (!r.empty()) {
    std::uint8_t kind, flags;
    std::uint16_t len;
    if (!r.u8(kind) || !r.u8(flags) || !r.u16(len)) fail(WireErrc::Truncated, "short submessage header");
    ByteView body;
    if (!r.take(len, body)) fail(WireErrc::Truncated, fmt::format("submessage length {} overruns buffer", len));
    if (!known_kind(kind)) continue;

    ByteReader br(body);
    auto parsed = read_body(static_cast<SubmessageKind>(kind), br);
    if (!parsed) fail(WireErrc::Truncated, fmt::format("submessage kind {} body truncated", kind));
    if (!br.empty()) fail(WireErrc::Malformed, fmt::format("{} trailing bytes in submessage kind {}", br.remaining(), kind));
    Submessage sm{flags, std::move(*parsed)};
    validate(sm);
    msg.submessages.push_back(std::move(sm));
  }
  return msg;
}

std::vector<DataFrag> fragment_payload(ByteView payload, std::size_t frag_size) {
  if (payload.empty()) fail(WireErrc::EmptyPayload, "cannot fragment an empty payload");
  if (frag_size == 0) throw std::invalid_argument("frag_size must be positive");
  if (payload.size() > 0xFFFF'FFFFu) fail(WireErrc::OversizeMessage, "payload exceeds 32-bit length");

  const auto count = static_cast<std::uint32_t>((payload.size() + frag_size - 1) / frag_size);
  std::vector<DataFrag> frags;
  frags.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t off = std::size_t{i} * frag_size;
    const std::size_t n = std::min(frag_size, payload.size() - off);
    DataFrag f;
    f.frag_index = i;
    f.frag_count = count;
    f.total_len = static_cast<std::uint32_t>(payload.size());
    f.fragment.assign(payload.begin() + off, payload.begin() + off + n);
    frags.push_back(std::move(f));
  }
  return frags;
}

void FragmentAssembler::check_size(const DataFrag& frag) {
  const auto size = static_cast<std::uint32_t>(frag.fragment.size());
  const bool last = frag.frag_index + 1 == frag_count_;
  if (frag_count_ == 1) {
    if (size != total_len_) fail(WireErrc::InconsistentFragment, "single fragment shorter than total_len");
    return;
  }
  std::uint64_t pinned = frag_size_;
  if (!last) {
    if (pinned == 0) pinned = size;
    if (size != pinned) fail(WireErrc::InconsistentFragment, fmt::format("fragment {} has {} bytes, expected {}", frag.frag_index, size, pinned));
  } else {
    const std::uint64_t before = std::uint64_t{total_len_} - size;
    if (size > total_len_ || before % (frag_count_ - 1) != 0)
      fail(WireErrc::InconsistentFragment, "last fragment size contradicts total_len");
    const std::uint64_t implied = before / (frag_count_ - 1);
    if (pinned != 0 && implied != pinned) fail(WireErrc::InconsistentFragment, "last fragment size contradicts fragment size");
    pinned = implied;
  }
  // frag_count must equal ceil(total_len / frag_size).
  if (pinned == 0 || (frag_count_ - 1) * pinned >= total_len_ || std::uint64_t{frag_count_} * pinned < total_len_)
    fail(WireErrc::InconsistentFragment, "fragment size contradicts frag_count");
  frag_size_ = static_cast<std::uint32_t>(pinned);
}

bool FragmentAssembler::add(const DataFrag& frag) {
  if (frag.frag_count == 0 || frag.frag_index >= frag.frag_count || frag.total_len == 0)
    fail(WireErrc::InconsistentFragment, "fragment header out of range");
  if (frag_count_ == 0) {
    if (frag.frag_count > frag.total_len) fail(WireErrc::InconsistentFragment, "more fragments than bytes");
    total_len_ = frag.total_len;
    frag_count_ = frag.frag_count;
  } else if (frag.total_len != total_len_ || frag.frag_count != frag_count_) {
    fail(WireErrc::InconsistentFragment,
         fmt::format("fragment claims {}/{} but assembly has {}/{}", frag.total_len, frag.frag_count, total_len_, frag_count_));
  }
  check_size(frag);
  if (have_.empty()) {
    have_.assign(frag_count_, false);
    buffer_.resize(total_len_);
  }
  if (have_[frag.frag_index]) return complete();
  std::copy(frag.fragment.begin(), frag.fragment.end(), buffer_.begin() + std::size_t{frag.frag_index} * frag_size_);
  have_[frag.frag_index] = true;
  ++received_;
  return complete();
}

Bytes FragmentAssembler::take() {
  if (!complete()) throw std::logic_error("FragmentAssembler::take on incomplete sample");
  return std::move(buffer_);
}

std::optional<Bytes> reassemble(const std::vector<DataFrag>& frags) {
  FragmentAssembler a;
  for (const auto& f : frags) a.add(f);
  if (!a.complete()) return std::nullopt;
  return a.take();
}

}  // namespace meddds::wire
