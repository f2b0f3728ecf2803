#pragma once

#include <string>

#include "meddds/transport.hpp"

namespace meddds::transport {

class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(o.release()) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept;
  ~UniqueFd();

  int get() const { return fd_; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  explicit operator bool() const { return fd_ >= 0; }

 private:
  int fd_ = -1;
};

// One unicast socket for all outbound traffic and unicast data, plus one
// socket bound to the discovery port once a group is joined.
class UdpTransport final : public Transport {
 public:
  struct Options {
    std::uint16_t port = 0;  // 0 = auto-assign
    std::string bind_address = "0.0.0.0";
    std::string multicast_interface = "0.0.0.0";
    int multicast_ttl = 1;
  };

  UdpTransport();
  explicit UdpTransport(Options options);

  Locator local_locator() const override { return local_; }
  void send(const Locator& to, ByteView datagram) override;
  std::optional<Datagram> receive(std::chrono::milliseconds timeout) override;
  void join_discovery_group(const Locator& group) override;
  void interrupt() override;

 private:
  std::optional<Datagram> read_from(int fd);

  Options options_;
  UniqueFd unicast_;
  UniqueFd discovery_;
  UniqueFd wake_;
  Locator local_;
};

}  // namespace meddds::transport
