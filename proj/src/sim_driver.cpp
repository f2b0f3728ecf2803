#include "meddds/sim_driver.hpp"

#include <algorithm>

namespace meddds::pubsub {

std::uint64_t SimulationDriver::next_event_us() const {
  std::uint64_t next = UINT64_MAX;
  if (auto due = network_.next_due_us()) next = *due;
  for (const Participant* p : participants_) next = std::min(next, p->next_deadline_us());
  return next;
}

void SimulationDriver::pump_all() {
  for (Participant* p : participants_) p->pump();
}

void SimulationDriver::run_until(std::uint64_t t_us) {
  run_until([] { return false; }, t_us > clock_.now_us() ? t_us - clock_.now_us() : 0);
  if (clock_.now_us() < t_us) clock_.set(t_us);
}

bool SimulationDriver::run_until(const std::function<bool()>& done, std::uint64_t limit_us) {
  const std::uint64_t end = clock_.now_us() + limit_us;
  pump_all();
  if (done()) return true;
  for (;;) {
    const std::uint64_t next = next_event_us();
    if (next > end) {
      clock_.set(end);
      pump_all();
      return done();
    }
    if (next > clock_.now_us()) clock_.set(next);
    pump_all();
    if (done()) return true;
  }
}

}  // namespace meddds::pubsub
