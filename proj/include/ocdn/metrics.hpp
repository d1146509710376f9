#pragma once

#include "ocdn/transport.hpp"

#include <chrono>

namespace ocdn::metrics {

/// Operations broken out in the per-request overhead figure.
enum class Op
{
  ExitLookup,
  HmacDerivation,
  SharedKeyDecrypt,
  SessionKeyEncrypt,
  ClientDecrypt,
};

inline constexpr std::array<Op, 5> kAllOps{Op::ExitLookup, Op::HmacDerivation,
                                           Op::SharedKeyDecrypt, Op::SessionKeyEncrypt,
                                           Op::ClientDecrypt};

inline std::string_view to_string(Op op)
{
  switch (op) {
  case Op::ExitLookup:
    return "exit_lookup";
  case Op::HmacDerivation:
    return "hmac_derivation";
  case Op::SharedKeyDecrypt:
    return "shared_key_decrypt";
  case Op::SessionKeyEncrypt:
    return "session_key_encrypt";
  case Op::ClientDecrypt:
    return "client_decrypt";
  }
  return "unknown";
}

struct OpSample
{
  Op op;
  net::RequestId request{};
  std::uint64_t bytes = 0;
  double native_us = 0.0;
};

class OpRecorder
{
public:
  virtual ~OpRecorder() = default;
  virtual void record(const OpSample& sample) = 0;
};

/// Times one operation on the steady clock and reports it when destroyed.
class ScopedOp
{
public:
  ScopedOp(OpRecorder* recorder, Op op, const net::RequestId& request, std::uint64_t bytes)
    : m_recorder(recorder)
    , m_sample{op, request, bytes, 0.0}
    , m_start(std::chrono::steady_clock::now())
  {
  }

  ~ScopedOp()
  {
    if (m_recorder == nullptr)
      return;
    m_sample.native_us =
      std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - m_start).count();
    m_recorder->record(m_sample);
  }

  void set_bytes(std::uint64_t bytes) { m_sample.bytes = bytes; }

  ScopedOp(const ScopedOp&) = delete;
  ScopedOp& operator=(const ScopedOp&) = delete;

private:
  OpRecorder* m_recorder;
  OpSample m_sample;
  std::chrono::steady_clock::time_point m_start;
};

} // namespace ocdn::metrics
