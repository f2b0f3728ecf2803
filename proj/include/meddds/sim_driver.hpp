#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "meddds/clock.hpp"
#include "meddds/participant.hpp"
#include "meddds/sim_transport.hpp"

namespace meddds::pubsub {

// Runs participants over a SimNetwork in virtual time, single-threaded.
// Time jumps straight to the next event (datagram due or timer deadline), so
// minutes of protocol activity replay in milliseconds and every run with the
// same seed is identical.
class SimulationDriver {
 public:
  SimulationDriver(ManualClock& clock, transport::SimNetwork& network) : clock_(clock), network_(network) {}

  void add(Participant& p) { participants_.push_back(&p); }

  // Processes every event with time <= t_us, then parks the clock at t_us.
  void run_until(std::uint64_t t_us);
  void run_for_ms(std::uint64_t ms) { run_until(clock_.now_us() + ms * 1000); }

  // Runs until `done` holds (checked after each event) or `limit_us` of
  // virtual time passes. Returns whether `done` held.
  bool run_until(const std::function<bool()>& done, std::uint64_t limit_us);

  std::uint64_t now_us() const { return clock_.now_us(); }

 private:
  std::uint64_t next_event_us() const;
  void pump_all();

  ManualClock& clock_;
  transport::SimNetwork& network_;
  std::vector<Participant*> participants_;
};

}  // namespace meddds::pubsub
