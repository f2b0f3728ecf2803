#include "meddds/udp_transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

namespace meddds::transport {

namespace {

[[noreturn]] void net_fail(const std::string& what) {
  throw TransportError(TransportErrc::NetworkUnavailable, fmt::format("{}: {}", what, std::strerror(errno)));
}

sockaddr_in to_sockaddr(const Locator& loc) {
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(loc.port);
  sa.sin_addr.s_addr = htonl(loc.address_host_order());
  return sa;
}

Locator from_sockaddr(const sockaddr_in& sa) {
  const std::uint32_t a = ntohl(sa.sin_addr.s_addr);
  return Locator::ipv4(static_cast<std::uint8_t>(a >> 24), static_cast<std::uint8_t>(a >> 16),
                       static_cast<std::uint8_t>(a >> 8), static_cast<std::uint8_t>(a), ntohs(sa.sin_port));
}

in_addr parse_addr(const std::string& s) {
  in_addr a{};
  if (inet_pton(AF_INET, s.c_str(), &a) != 1) throw std::invalid_argument(fmt::format("bad IPv4 address '{}'", s));
  return a;
}

UniqueFd udp_socket() {
  UniqueFd fd(::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0));
  if (!fd) net_fail("socket");
  return fd;
}

}  // namespace

UniqueFd& UniqueFd::operator=(UniqueFd&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    fd_ = o.release();
  }
  return *this;
}

UniqueFd::~UniqueFd() {
  if (fd_ >= 0) ::close(fd_);
}

UdpTransport::UdpTransport() : UdpTransport(Options{}) {}

UdpTransport::UdpTransport(Options options) : options_(std::move(options)) {
  unicast_ = udp_socket();
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(options_.port);
  sa.sin_addr = parse_addr(options_.bind_address);
  if (::bind(unicast_.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
    net_fail(fmt::format("bind {}:{}", options_.bind_address, options_.port));

  const int loop = 1;
  const int ttl = options_.multicast_ttl;
  const in_addr iface = parse_addr(options_.multicast_interface);
  ::setsockopt(unicast_.get(), IPPROTO_IP, IP_MULTICAST_LOOP, &loop, sizeof loop);
  ::setsockopt(unicast_.get(), IPPROTO_IP, IP_MULTICAST_TTL, &ttl, sizeof ttl);
  if (iface.s_addr != htonl(INADDR_ANY)) ::setsockopt(unicast_.get(), IPPROTO_IP, IP_MULTICAST_IF, &iface, sizeof iface);
  const int buf = 4 << 20;
  ::setsockopt(unicast_.get(), SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);

  socklen_t len = sizeof sa;
  if (::getsockname(unicast_.get(), reinterpret_cast<sockaddr*>(&sa), &len) != 0) net_fail("getsockname");
  local_ = from_sockaddr(sa);
  if (sa.sin_addr.s_addr == htonl(INADDR_ANY)) local_.address = {127, 0, 0, 1};

  wake_ = UniqueFd(::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC));
  if (!wake_) net_fail("eventfd");
}

void UdpTransport::send(const Locator& to, ByteView datagram) {
  if (datagram.size() > kMaxDatagramSize)
    throw TransportError(TransportErrc::TooLarge, fmt::format("datagram of {} bytes", datagram.size()));
  const sockaddr_in sa = to_sockaddr(to);
  ssize_t n;
  do {
    n = ::sendto(unicast_.get(), datagram.data(), datagram.size(), 0, reinterpret_cast<const sockaddr*>(&sa), sizeof sa);
  } while (n < 0 && errno == EINTR);
  if (n < 0) {
    // A full socket buffer is loss, not an outage.
    if (errno == ENOBUFS || errno == EAGAIN) return;
    net_fail(fmt::format("sendto {}", to.to_string()));
  }
}

std::optional<Datagram> UdpTransport::read_from(int fd) {
  Bytes buf(65'536);
  sockaddr_in sa{};
  socklen_t len = sizeof sa;
  const ssize_t n = ::recvfrom(fd, buf.data(), buf.size(), MSG_DONTWAIT, reinterpret_cast<sockaddr*>(&sa), &len);
  if (n < 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  return Datagram{from_sockaddr(sa), std::move(buf)};
}

std::optional<Datagram> UdpTransport::receive(std::chrono::milliseconds timeout) {
  pollfd fds[3] = {{wake_.get(), POLLIN, 0}, {unicast_.get(), POLLIN, 0}, {discovery_.get(), POLLIN, 0}};
  const nfds_t count = discovery_ ? 3 : 2;
  const int rc = ::poll(fds, count, static_cast<int>(timeout.count()));
  if (rc <= 0) return std::nullopt;
  if (fds[0].revents & POLLIN) {
    std::uint64_t v;
    [[maybe_unused]] auto r = ::read(wake_.get(), &v, sizeof v);
    return std::nullopt;
  }
  for (nfds_t i = 1; i < count; ++i) {
    if (fds[i].revents & POLLIN) {
      if (auto d = read_from(fds[i].fd)) return d;
    }
  }
  return std::nullopt;
}

void UdpTransport::join_discovery_group(const Locator& group) {
  if (!group.is_multicast())
    throw TransportError(TransportErrc::NotMulticast, group.to_string() + " is not a multicast address");
  UniqueFd fd = udp_socket();
  const int on = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &on, sizeof on);
#ifdef SO_REUSEPORT
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEPORT, &on, sizeof on);
#endif
  sockaddr_in sa{};
  sa.sin_family = AF_INET;
  sa.sin_port = htons(group.port);
  sa.sin_addr.s_addr = htonl(group.address_host_order());
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0)
    net_fail(fmt::format("bind discovery {}", group.to_string()));
  ip_mreq mreq{};
  mreq.imr_multiaddr.s_addr = htonl(group.address_host_order());
  mreq.imr_interface = parse_addr(options_.multicast_interface);
  if (::setsockopt(fd.get(), IPPROTO_IP, IP_ADD_MEMBERSHIP, &mreq, sizeof mreq) != 0)
    net_fail(fmt::format("join {}", group.to_string()));
  discovery_ = std::move(fd);
}

void UdpTransport::interrupt() {
  const std::uint64_t one = 1;
  [[maybe_unused]] auto r = ::write(wake_.get(), &one, sizeof one);
}

}  // namespace meddds::transport
