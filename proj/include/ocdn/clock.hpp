#pragma once

#include <atomic>
#include <cstdint>

namespace ocdn {

/// Wall-clock source in unix milliseconds. Roles never read time directly.
class Clock
{
public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;

  std::int64_t now_seconds() const { return now_ms() / 1000; }
};

class SystemClock final : public Clock
{
public:
  std::int64_t now_ms() const override;
};

/// Settable clock for deterministic runs.
class ManualClock final : public Clock
{
public:
  explicit ManualClock(std::int64_t start_ms = 1'700'000'000'000) : m_now(start_ms) {}

  std::int64_t now_ms() const override { return m_now.load(); }
  void set_ms(std::int64_t t) { m_now.store(t); }
  void advance_ms(std::int64_t dt) { m_now.fetch_add(dt); }

private:
  std::atomic<std::int64_t> m_now;
};

} // namespace ocdn
