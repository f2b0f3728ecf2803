#pragma once

#include <array>
#include <chrono>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "meddds/bytes.hpp"

namespace meddds::transport {

struct Locator {
  std::array<std::uint8_t, 4> address{};
  std::uint16_t port = 0;

  // "a.b.c.d:port"; throws std::invalid_argument.
  static Locator parse(std::string_view text);
  static Locator ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d, std::uint16_t port);

  bool is_multicast() const { return address[0] >= 224 && address[0] <= 239; }
  std::uint32_t address_host_order() const;
  std::string to_string() const;

  auto operator<=>(const Locator&) const = default;
};

inline const Locator kDefaultDiscoveryGroup = Locator::ipv4(239, 255, 0, 7, 7400);

struct Datagram {
  Locator source;
  Bytes bytes;
};

enum class TransportErrc { TooLarge, NetworkUnavailable, NotMulticast };

class TransportError : public std::runtime_error {
 public:
  TransportError(TransportErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  TransportErrc code() const { return code_; }

 private:
  TransportErrc code_;
};

inline constexpr std::size_t kMaxDatagramSize = 65'507;

// Unreliable datagram service. send() may be called from several threads;
// receive() from one thread at a time.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual Locator local_locator() const = 0;

  // Hands the datagram to the network. Delivery is not guaranteed.
  virtual void send(const Locator& to, ByteView datagram) = 0;

  // Next datagram, or nullopt if nothing arrived within `timeout` (or the
  // wait was interrupted).
  virtual std::optional<Datagram> receive(std::chrono::milliseconds timeout) = 0;

  // After this call, datagrams sent to `group` are received here.
  virtual void join_discovery_group(const Locator& group) = 0;

  // Wakes a thread blocked in receive().
  virtual void interrupt() = 0;
};

enum class Direction { Sent, Received };

// Observes every datagram crossing `inner` without altering it.
class TapTransport final : public Transport {
 public:
  using Tap = std::function<void(Direction, const Locator& peer, ByteView bytes)>;

  TapTransport(Transport& inner, Tap tap) : inner_(inner), tap_(std::move(tap)) {}

  Locator local_locator() const override { return inner_.local_locator(); }
  void send(const Locator& to, ByteView datagram) override {
    inner_.send(to, datagram);
    tap_(Direction::Sent, to, datagram);
  }
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override {
    auto d = inner_.receive(timeout);
    if (d) tap_(Direction::Received, d->source, d->bytes);
    return d;
  }
  void join_discovery_group(const Locator& group) override { inner_.join_discovery_group(group); }
  void interrupt() override { inner_.interrupt(); }

 private:
  Transport& inner_;
  Tap tap_;
};

}  // namespace meddds::transport
