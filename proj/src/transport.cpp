#include "meddds/transport.hpp"

#include <charconv>
#include <stdexcept>

#include <fmt/format.h>

namespace meddds::transport {

Locator Locator::ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d, std::uint16_t port) {
  return Locator{{a, b, c, d}, port};
}

Locator Locator::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw std::invalid_argument(fmt::format("locator '{}' lacks ':port'", text));

  auto parse_uint = [&](std::string_view s, unsigned max) {
    unsigned v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || end != s.data() + s.size() || v > max)
      throw std::invalid_argument(fmt::format("bad locator '{}'", text));
    return v;
  };

  Locator loc;
  loc.port = static_cast<std::uint16_t>(parse_uint(text.substr(colon + 1), 65535));
  std::string_view host = text.substr(0, colon);
  for (int i = 0; i < 4; ++i) {
    const auto dot = host.find('.');
    if ((i < 3) == (dot == std::string_view::npos)) throw std::invalid_argument(fmt::format("bad locator '{}'", text));
    loc.address[i] = static_cast<std::uint8_t>(parse_uint(host.substr(0, dot), 255));
    host = dot == std::string_view::npos ? std::string_view{} : host.substr(dot + 1);
  }
  return loc;
}

std::uint32_t Locator::address_host_order() const {
  return (std::uint32_t{address[0]} << 24) | (std::uint32_t{address[1]} << 16) | (std::uint32_t{address[2]} << 8) |
         address[3];
}

std::string Locator::to_string() const {
  return fmt::format("{}.{}.{}.{}:{}", address[0], address[1], address[2], address[3], port);
}

}  // namespace meddds::transport
