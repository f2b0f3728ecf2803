#pragma once

// In-process network with deterministic fault injection.
//
// Every datagram handed to the bus consumes exactly three draws from the
// profile's pseudo-random stream, in this order: loss, delay, reorder. A
// multicast send counts as one datagram per recipient, recipients visited in
// endpoint creation order. Given the same seed and the same send sequence the
// resulting delivery trace is identical on every run and platform.
//
// Reordering holds one datagram back and releases it right after the next
// datagram that survives loss.

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <vector>

#include "meddds/clock.hpp"
#include "meddds/transport.hpp"

namespace meddds::transport {

struct FaultProfile {
  double loss_probability = 0.0;
  std::uint32_t delay_min_ms = 0;
  std::uint32_t delay_max_ms = 0;
  double reorder_probability = 0.0;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct FaultDecision {
  bool lost = false;
  std::uint32_t delay_ms = 0;
  bool reorder = false;

  bool operator==(const FaultDecision&) const = default;
};

class FaultInjector {
 public:
  explicit FaultInjector(const FaultProfile& profile);
  FaultDecision next();

 private:
  double uniform();

  FaultProfile profile_;
  std::mt19937_64 rng_;
};

class SimTransport;

class SimNetwork {
 public:
  struct TraceEntry {
    std::uint64_t index = 0;  // order in which the bus saw the datagram
    Locator from;
    Locator to;
    FaultDecision decision;
  };

  SimNetwork(const Clock& clock, FaultProfile profile);
  ~SimNetwork();
  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  // Endpoints get addresses 10.0.0.<n>; port 0 picks 7410 + n.
  std::unique_ptr<SimTransport> create_endpoint(std::uint16_t port = 0);

  // Earliest time at which some queued datagram becomes receivable.
  std::optional<std::uint64_t> next_due_us() const;
  bool idle() const;

  std::vector<TraceEntry> trace() const;
  std::uint64_t datagrams_seen() const;

  const Clock& clock() const { return clock_; }

 private:
  friend class SimTransport;

  struct Pending {
    std::uint64_t due_us;
    std::uint64_t order;
    Locator from;
    Bytes bytes;
  };
  struct PendingLater {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.due_us != b.due_us ? a.due_us > b.due_us : a.order > b.order;
    }
  };
  struct Endpoint {
    Locator locator;
    std::vector<Pending> inbox;  // heap ordered by PendingLater
    bool interrupted = false;
    bool alive = true;
  };
  struct Held {
    std::size_t endpoint;
    Pending pending;
  };

  void submit(std::size_t from_endpoint, const Locator& to, ByteView bytes);
  void route(std::size_t from_endpoint, std::size_t to_endpoint, ByteView bytes);
  void enqueue(std::size_t endpoint, Pending p);
  std::optional<Datagram> receive(std::size_t endpoint, std::chrono::milliseconds timeout);
  void join(std::size_t endpoint, const Locator& group);
  void interrupt(std::size_t endpoint);
  void detach(std::size_t endpoint);

  const Clock& clock_;
  FaultInjector faults_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Endpoint> endpoints_;
  std::map<Locator, std::set<std::size_t>> groups_;
  std::optional<Held> held_;
  std::uint64_t next_order_ = 0;
  std::uint64_t seen_ = 0;
  std::vector<TraceEntry> trace_;
};

class SimTransport final : public Transport {
 public:
  ~SimTransport() override;

  Locator local_locator() const override { return locator_; }
  void send(const Locator& to, ByteView datagram) override;
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override;
  void join_discovery_group(const Locator& group) override;
  void interrupt() override;

 private:
  friend class SimNetwork;
  SimTransport(SimNetwork& net, std::size_t index, Locator locator) : net_(net), index_(index), locator_(locator) {}

  SimNetwork& net_;
  std::size_t index_;
  Locator locator_;
};

}  // namespace meddds::transport
