#include "meddds/sim_transport.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace meddds::transport {

void FaultProfile::validate() const {
  if (!(loss_probability >= 0.0 && loss_probability <= 1.0))
    throw std::invalid_argument(fmt::format("loss_probability {} outside [0,1]", loss_probability));
  if (!(reorder_probability >= 0.0 && reorder_probability <= 1.0))
    throw std::invalid_argument(fmt::format("reorder_probability {} outside [0,1]", reorder_probability));
  if (delay_min_ms > delay_max_ms) throw std::invalid_argument("delay_min_ms > delay_max_ms");
}

FaultInjector::FaultInjector(const FaultProfile& profile) : profile_(profile), rng_(profile.seed) {
  profile_.validate();
}

// 53 high bits of one mt19937_64 output; std::uniform_real_distribution is
// not reproducible across standard libraries.
double FaultInjector::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

FaultDecision FaultInjector::next() {
  FaultDecision d;
  d.lost = uniform() < profile_.loss_probability;
  const std::uint64_t span = std::uint64_t{profile_.delay_max_ms} - profile_.delay_min_ms + 1;
  d.delay_ms = profile_.delay_min_ms + static_cast<std::uint32_t>(std::min<std::uint64_t>(
                                           static_cast<std::uint64_t>(uniform() * static_cast<double>(span)), span - 1));
  d.reorder = uniform() < profile_.reorder_probability;
  return d;
}

SimNetwork::SimNetwork(const Clock& clock, FaultProfile profile) : clock_(clock), faults_(profile) {}

SimNetwork::~SimNetwork() = default;

std::unique_ptr<SimTransport> SimNetwork::create_endpoint(std::uint16_t port) {
  std::lock_guard lock(mu_);
  const std::size_t index = endpoints_.size();
  if (index >= 250) throw std::length_error("simulated network is full");
  const auto host = static_cast<std::uint8_t>(index + 1);
  const Locator loc = Locator::ipv4(10, 0, 0, host, port != 0 ? port : static_cast<std::uint16_t>(7410 + index));
  endpoints_.push_back(Endpoint{loc, {}, false, true});
  return std::unique_ptr<SimTransport>(new SimTransport(*this, index, loc));
}

std::optional<std::uint64_t> SimNetwork::next_due_us() const {
  std::lock_guard lock(mu_);
  std::optional<std::uint64_t> best;
  for (const auto& ep : endpoints_) {
    if (!ep.alive || ep.inbox.empty()) continue;
    const auto due = ep.inbox.front().due_us;
    if (!best || due < *best) best = due;
  }
  return best;
}

bool SimNetwork::idle() const {
  std::lock_guard lock(mu_);
  if (held_) return false;
  return std::all_of(endpoints_.begin(), endpoints_.end(), [](const Endpoint& e) { return e.inbox.empty(); });
}

std::vector<SimNetwork::TraceEntry> SimNetwork::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

std::uint64_t SimNetwork::datagrams_seen() const {
  std::lock_guard lock(mu_);
  return seen_;
}

void SimNetwork::submit(std::size_t from_endpoint, const Locator& to, ByteView bytes) {
  if (bytes.size() > kMaxDatagramSize)
    throw TransportError(TransportErrc::TooLarge, fmt::format("datagram of {} bytes", bytes.size()));
  {
    std::lock_guard lock(mu_);
    if (to.is_multicast()) {
      auto it = groups_.find(to);
      if (it != groups_.end()) {
        for (std::size_t member : it->second) {
          if (member != from_endpoint && endpoints_[member].alive) route(from_endpoint, member, bytes);
        }
      }
    } else {
      for (std::size_t i = 0; i < endpoints_.size(); ++i) {
        if (endpoints_[i].locator == to && endpoints_[i].alive) {
          route(from_endpoint, i, bytes);
          break;
        }
      }
      // Unknown unicast destinations silently swallow the datagram, as UDP would.
    }
  }
  cv_.notify_all();
}

void SimNetwork::route(std::size_t from_endpoint, std::size_t to_endpoint, ByteView bytes) {
  const FaultDecision d = faults_.next();
  trace_.push_back(TraceEntry{seen_++, endpoints_[from_endpoint].locator, endpoints_[to_endpoint].locator, d});
  if (d.lost) return;

  Pending p{clock_.now_us() + std::uint64_t{d.delay_ms} * 1000, next_order_++, endpoints_[from_endpoint].locator,
            Bytes(bytes.begin(), bytes.end())};
  if (d.reorder && !held_) {
    held_ = Held{to_endpoint, std::move(p)};
    return;
  }
  const std::uint64_t due = p.due_us;
  enqueue(to_endpoint, std::move(p));
  if (held_) {
    Held h = std::move(*held_);
    held_.reset();
    h.pending.due_us = std::max(h.pending.due_us, due);
    h.pending.order = next_order_++;
    enqueue(h.endpoint, std::move(h.pending));
  }
}

void SimNetwork::enqueue(std::size_t endpoint, Pending p) {
  auto& inbox = endpoints_[endpoint].inbox;
  inbox.push_back(std::move(p));
  std::push_heap(inbox.begin(), inbox.end(), PendingLater{});
}

std::optional<Datagram> SimNetwork::receive(std::size_t endpoint, std::chrono::milliseconds timeout) {
  using namespace std::chrono;
  const auto deadline = steady_clock::now() + timeout;
  std::unique_lock lock(mu_);
  for (;;) {
    auto& ep = endpoints_[endpoint];
    if (ep.interrupted) {
      ep.interrupted = false;
      return std::nullopt;
    }
    const std::uint64_t now = clock_.now_us();
    if (!ep.inbox.empty() && ep.inbox.front().due_us <= now) {
      std::pop_heap(ep.inbox.begin(), ep.inbox.end(), PendingLater{});
      Pending p = std::move(ep.inbox.back());
      ep.inbox.pop_back();
      return Datagram{p.from, std::move(p.bytes)};
    }
    const auto real_now = steady_clock::now();
    if (real_now >= deadline) return std::nullopt;
    auto wait = deadline - real_now;
    if (!ep.inbox.empty()) wait = std::min<steady_clock::duration>(wait, microseconds(ep.inbox.front().due_us - now));
    cv_.wait_for(lock, wait);
  }
}

void SimNetwork::join(std::size_t endpoint, const Locator& group) {
  if (!group.is_multicast())
    throw TransportError(TransportErrc::NotMulticast, group.to_string() + " is not a multicast address");
  std::lock_guard lock(mu_);
  groups_[group].insert(endpoint);
}

void SimNetwork::interrupt(std::size_t endpoint) {
  {
    std::lock_guard lock(mu_);
    endpoints_[endpoint].interrupted = true;
  }
  cv_.notify_all();
}

void SimNetwork::detach(std::size_t endpoint) {
  std::lock_guard lock(mu_);
  endpoints_[endpoint].alive = false;
  endpoints_[endpoint].inbox.clear();
  for (auto& [group, members] : groups_) members.erase(endpoint);
}

SimTransport::~SimTransport() { net_.detach(index_); }

void SimTransport::send(const Locator& to, ByteView datagram) { net_.submit(index_, to, datagram); }

std::optional<Datagram> SimTransport::receive(std::chrono::milliseconds timeout) {
  return net_.receive(index_, timeout);
}

void SimTransport::join_discovery_group(const Locator& group) { net_.join(index_, group); }

void SimTransport::interrupt() { net_.interrupt(index_); }

}  // namespace meddds::transport
