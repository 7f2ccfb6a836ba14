#pragma once

#include <chrono>
#include <mutex>
#include <thread>

namespace greenbench {

// Seconds on a monotonic timeline. The origin is clock-specific.
using Seconds = std::chrono::duration<double>;

// Time source for the measurement protocol. Waits (baseline windows,
// cooldowns) go through sleep_for so tests can skip them.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Seconds now() const = 0;
  virtual void sleep_for(Seconds d) = 0;
};

class SteadyClock final : public Clock {
 public:
  Seconds now() const override {
    return std::chrono::duration_cast<Seconds>(std::chrono::steady_clock::now().time_since_epoch());
  }
  void sleep_for(Seconds d) override {
    if (d.count() > 0) std::this_thread::sleep_for(d);
  }
};

// Real elapsed time plus a virtual offset: sleep_for advances the offset
// instantly instead of blocking. Subprocess executions still take their real
// duration, so runtimes stay genuine while idle waits cost nothing.
class VirtualClock final : public Clock {
 public:
  Seconds now() const override {
    std::lock_guard lock(mu_);
    return real_.now() + offset_;
  }
  void sleep_for(Seconds d) override {
    if (d.count() <= 0) return;
    std::lock_guard lock(mu_);
    offset_ += d;
  }

 private:
  SteadyClock real_;
  mutable std::mutex mu_;
  Seconds offset_{0};
};

}  // namespace greenbench
