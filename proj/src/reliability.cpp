#include "meddds/reliability.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

namespace meddds::pubsub {

void QoS::validate() const {
  if (history_depth == 0) throw std::invalid_argument("history_depth must be positive");
  if (heartbeat_period_ms == 0) throw std::invalid_argument("heartbeat_period_ms must be positive");
}

WriterHistory::WriterHistory(std::size_t depth) : depth_(depth) {
  if (depth == 0) throw std::invalid_argument("history_depth must be positive");
}

SequenceNumber WriterHistory::add(Bytes payload) {
  samples_.push_back(std::move(payload));
  if (samples_.size() > depth_) samples_.pop_front();
  return next_seq_++;
}

const Bytes* WriterHistory::find(SequenceNumber seq) const {
  if (seq < first_seq() || seq >= next_seq_) return nullptr;
  return &samples_[seq - first_seq()];
}

wire::Heartbeat WriterHistory::make_heartbeat(EntityId writer_id) {
  return wire::Heartbeat{writer_id, first_seq(), last_seq(), ++heartbeat_count_};
}

AckNackResponse writer_on_acknack(WriterHistory& history, EntityId writer_id, ReaderProxy& proxy,
                                  const wire::AckNack& acknack) {
  AckNackResponse out;
  if (proxy.last_acknack_count && acknack.count <= *proxy.last_acknack_count) {
    out.stale = true;
    return out;
  }
  proxy.last_acknack_count = acknack.count;
  // A reader can only acknowledge what was written.
  proxy.acked_below = std::max(proxy.acked_below, std::min(acknack.base_seq, history.next_seq()));

  for (SequenceNumber seq : acknack.requested()) {
    if (seq >= history.next_seq()) continue;
    if (history.find(seq) != nullptr) {
      out.retransmit.push_back(seq);
    } else {
      out.unrecoverable.push_back(seq);
    }
  }
  if (!out.unrecoverable.empty()) out.gap_heartbeat = history.make_heartbeat(writer_id);
  return out;
}

WriterProxy::WriterProxy(Guid writer, Reliability reliability, SequenceNumber highest_delivered,
                         std::size_t max_reassemblies)
    : writer_(writer),
      reliability_(reliability),
      highest_delivered_(highest_delivered),
      max_reassemblies_(std::max<std::size_t>(1, max_reassemblies)) {}

bool WriterProxy::received(SequenceNumber seq) const {
  return seq <= highest_delivered_ || pending_.contains(seq);
}

std::vector<Delivery> WriterProxy::accept(SequenceNumber seq, Bytes payload) {
  std::vector<Delivery> out;
  if (reliability_ == Reliability::BestEffort) {
    if (seq > highest_delivered_) {
      highest_delivered_ = seq;
      // Anything older still being assembled can no longer be delivered.
      assemblies_.erase(assemblies_.begin(), assemblies_.upper_bound(seq));
      out.push_back(Delivery{seq, std::move(payload)});
    }
    return out;
  }
  if (received(seq)) return out;
  pending_.emplace(seq, std::move(payload));
  drain_contiguous(out);
  return out;
}

void WriterProxy::drain_contiguous(std::vector<Delivery>& out) {
  for (auto it = pending_.begin(); it != pending_.end() && it->first == highest_delivered_ + 1;
       it = pending_.erase(it)) {
    highest_delivered_ = it->first;
    out.push_back(Delivery{it->first, std::move(it->second)});
  }
}

std::vector<Delivery> WriterProxy::on_data(SequenceNumber seq, Bytes payload) {
  if (seq == 0) return {};
  assemblies_.erase(seq);
  return accept(seq, std::move(payload));
}

std::vector<Delivery> WriterProxy::on_data_frag(const wire::DataFrag& frag) {
  const SequenceNumber seq = frag.seq;
  if (seq == 0 || received(seq) || frag.total_len > kMaxPayloadBytes) {
    if (frag.total_len > kMaxPayloadBytes) ++dropped_fragments_;
    return {};
  }
  auto it = assemblies_.find(seq);
  if (it == assemblies_.end()) {
    if (assemblies_.size() >= max_reassemblies_) {
      if (reliability_ == Reliability::BestEffort) {
        // Newest wins: the oldest incomplete sample is the least useful.
        if (seq < assemblies_.begin()->first) {
          ++dropped_fragments_;
          return {};
        }
        assemblies_.erase(assemblies_.begin());
      } else {
        // Keep the lowest pending seqs so the delivery frontier can always
        // progress; the evicted train is requested again later.
        auto highest = std::prev(assemblies_.end());
        if (seq > highest->first) {
          ++dropped_fragments_;
          return {};
        }
        assemblies_.erase(highest);
      }
    }
    it = assemblies_.emplace(seq, wire::FragmentAssembler{}).first;
  }
  try {
    if (!it->second.add(frag)) return {};
  } catch (const wire::WireError& e) {
    spdlog::warn("dropping fragment train {} seq {}: {}", writer_.to_string(), seq, e.what());
    assemblies_.erase(it);
    ++dropped_fragments_;
    return {};
  }
  Bytes payload = it->second.take();
  assemblies_.erase(it);
  return accept(seq, std::move(payload));
}

void WriterProxy::skip_to(SequenceNumber first_available, std::vector<Delivery>& out) {
  // Everything below first_available that has not arrived is gone for good.
  while (highest_delivered_ + 1 < first_available) {
    const SequenceNumber next = highest_delivered_ + 1;
    auto it = pending_.find(next);
    if (it != pending_.end()) {
      out.push_back(Delivery{next, std::move(it->second)});
      pending_.erase(it);
    } else {
      ++skipped_;
    }
    highest_delivered_ = next;
  }
  assemblies_.erase(assemblies_.begin(), assemblies_.lower_bound(first_available));
  drain_contiguous(out);
}

WriterProxy::HeartbeatResult WriterProxy::on_heartbeat(const wire::Heartbeat& hb, EntityId reader_id) {
  HeartbeatResult out;
  if (reliability_ != Reliability::Reliable) return out;
  if (last_heartbeat_count_ && hb.count <= *last_heartbeat_count_) return out;
  last_heartbeat_count_ = hb.count;

  if (hb.first_seq > highest_delivered_ + 1) {
    const auto before = skipped_;
    skip_to(hb.first_seq, out.deliveries);
    if (skipped_ != before)
      spdlog::warn("writer {} no longer holds {} sample(s); skipping to seq {}", writer_.to_string(),
                   skipped_ - before, hb.first_seq);
  }

  wire::AckNack an;
  an.reader_id = reader_id;
  an.writer_guid = writer_;
  an.base_seq = highest_delivered_ + 1;
  an.count = ++acknack_count_;
  if (hb.last_seq >= an.base_seq) {
    an.num_bits = static_cast<std::uint32_t>(
        std::min<SequenceNumber>(hb.last_seq - an.base_seq + 1, wire::kMaxAckNackBits));
    for (std::uint32_t i = 0; i < an.num_bits; ++i) {
      if (!pending_.contains(an.base_seq + i)) an.missing.set(i);
    }
  }
  out.acknack = an;
  return out;
}

wire::Submessage acknack_submessage(const wire::AckNack& an) {
  return wire::Submessage{an.missing.none() ? wire::kFlagFinal : std::uint8_t{0}, an};
}

}  // namespace meddds::pubsub
