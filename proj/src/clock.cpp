#include "meddds/clock.hpp"

namespace meddds {

WallClock::WallClock()
    : epoch_at_start_us_(static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
              .count())),
      steady_start_(std::chrono::steady_clock::now()) {}

std::uint64_t WallClock::now_us() const {
  const auto elapsed = std::chrono::steady_clock::now() - steady_start_;
  return epoch_at_start_us_ +
         static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::microseconds>(elapsed).count());
}

WallClock& WallClock::instance() {
  static WallClock clock;
  return clock;
}

}  // namespace meddds
