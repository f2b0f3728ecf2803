#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace meddds {

// Microseconds since the Unix epoch. Implementations must be monotonic.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::uint64_t now_us() const = 0;
};

// Epoch-anchored at construction, then advanced by steady_clock so that
// wall-clock adjustments never move time backwards.
class WallClock final : public Clock {
 public:
  WallClock();
  std::uint64_t now_us() const override;

  static WallClock& instance();

 private:
  std::uint64_t epoch_at_start_us_;
  std::chrono::steady_clock::time_point steady_start_;
};

// Virtual time for deterministic simulation. Only moves when told to.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::uint64_t start_us = 1'000'000) : now_(start_us) {}
  std::uint64_t now_us() const override { return now_.load(std::memory_order_acquire); }
  void set(std::uint64_t t_us) { now_.store(t_us, std::memory_order_release); }
  void advance(std::uint64_t d_us) { now_.fetch_add(d_us, std::memory_order_acq_rel); }

 private:
  std::atomic<std::uint64_t> now_;
};

}  // namespace meddds
